from __future__ import annotations

import numpy as np
import pytest

import oracles
from robustsize.covariance import (
    Ar1Param,
    Ar2Param,
    HetWeights,
    SingularParameterError,
    ar1_inverse,
    ar1_limit_d,
    ar1_matrix,
    ar2_matrix,
    e_minus,
    e_plus,
    harmonic_basis,
    het_matrix,
    singular_approach_probe,
)


class TestAr1:
    def test_small_case(self):
        np.testing.assert_allclose(ar1_matrix(3, 0.5), [[1, 0.5, 0.25], [0.5, 1, 0.5], [0.25, 0.5, 1]])

    def test_white_noise(self):
        np.testing.assert_array_equal(ar1_matrix(5, 0.0), np.eye(5))

    def test_near_unit_root(self):
        # max deviation is 1 - rho^3 at the corner entries
        dev = np.abs(ar1_matrix(4, 0.999) - np.outer(e_plus(4), e_plus(4))).max()
        assert dev == pytest.approx(1 - 0.999**3)
        assert dev <= 0.004

    @pytest.mark.parametrize("rho", [-0.7, 0.0, 0.3, 0.95])
    def test_matches_loop(self, rho):
        np.testing.assert_allclose(ar1_matrix(7, rho), oracles.ar1(7, rho), atol=1e-15)

    def test_param_bounds(self):
        with pytest.raises(ValueError):
            Ar1Param(1.0)


class TestAr1Inverse:
    def test_two_by_two(self):
        np.testing.assert_allclose(ar1_inverse(2, 0.5), [[4 / 3, -2 / 3], [-2 / 3, 4 / 3]])

    def test_identity_at_zero(self):
        np.testing.assert_array_equal(ar1_inverse(4, 0.0), np.eye(4))

    def test_explosive_coefficient(self):
        prod = ar1_matrix(6, 1.2) @ ar1_inverse(6, 1.2)
        np.testing.assert_allclose(prod, np.eye(6), atol=1e-9)

    @pytest.mark.parametrize("rho", [1.0, -1.0])
    def test_singular(self, rho):
        with pytest.raises(SingularParameterError):
            ar1_inverse(5, rho)

    def test_against_dense_inverse(self):
        np.testing.assert_allclose(ar1_inverse(9, -0.6), np.linalg.inv(oracles.ar1(9, -0.6)), atol=1e-12)


class TestAr2:
    def test_white_noise_limit(self):
        np.testing.assert_allclose(ar2_matrix(6, Ar2Param(1e-6, 1.0)), np.eye(6), atol=1e-5)

    def test_zero_lag_one(self):
        S = ar2_matrix(4, Ar2Param(0.5, np.pi / 2))
        assert S[0, 1] == pytest.approx(0.0, abs=1e-15)
        assert S[0, 2] == pytest.approx(-0.25)

    @pytest.mark.parametrize("r", [0.3, 0.8, 0.95])
    def test_matches_spectral_integration(self, r):
        got = ar2_matrix(8, Ar2Param(r, 1.1))[0]
        np.testing.assert_allclose(got, oracles.ar2_autocorrelation(8, r, 1.1), atol=1e-9)

    def test_concentrates_on_harmonic_plane(self):
        E = harmonic_basis(8, np.pi / 3).basis
        dist = [np.linalg.norm(ar2_matrix(8, Ar2Param(r, np.pi / 3)) - E @ E.T) for r in (0.9, 0.99, 0.999)]
        assert dist[0] > dist[1] > dist[2]

    def test_param_bounds(self):
        with pytest.raises(ValueError):
            Ar2Param(0.5, 0.0)


class TestHarmonicBasis:
    def test_zero_frequency(self):
        np.testing.assert_array_equal(harmonic_basis(3, 0.0).basis, [[1], [1], [1]])

    def test_nyquist(self):
        np.testing.assert_array_equal(harmonic_basis(3, np.pi).basis, [[-1], [1], [-1]])

    def test_quarter_turn(self):
        np.testing.assert_allclose(harmonic_basis(4, np.pi / 2).basis, [[0, 1], [-1, 0], [0, -1], [1, 0]], atol=1e-15)


class TestHet:
    def test_uniform(self):
        np.testing.assert_allclose(het_matrix(HetWeights(np.full(4, 0.25))), np.eye(4) / 4)

    def test_two_point(self):
        np.testing.assert_array_equal(het_matrix(HetWeights(np.array([0.25, 0.75]))), np.diag([0.25, 0.75]))

    def test_concentration_on_first_axis(self):
        eps = 1e-9
        tau = np.array([1 - 3 * eps, eps, eps, eps])
        np.testing.assert_allclose(het_matrix(HetWeights(tau)), np.diag([1.0, 0, 0, 0]), atol=1e-8)

    def test_must_sum_to_one(self):
        with pytest.raises(ValueError):
            HetWeights(np.array([0.5, 0.6]))


class TestLimitD:
    @pytest.mark.parametrize("n", [3, 6, 9])
    def test_annihilates_and_unit_trace(self, n):
        D = ar1_limit_d(n, 1)
        np.testing.assert_allclose(D @ e_plus(n), 0.0, atol=1e-13)
        assert np.trace(D) == pytest.approx(1.0)
        Dm = ar1_limit_d(n, -1)
        np.testing.assert_allclose(Dm @ e_minus(n), 0.0, atol=1e-13)
        assert np.trace(Dm) == pytest.approx(1.0)

    def test_direct_evaluation_n6(self):
        n, rho = 6, 1 - 1e-4
        Pi = np.eye(n) - np.ones((n, n)) / n
        P = Pi @ oracles.ar1(n, rho) @ Pi
        Dm = P / np.trace(P)
        assert np.abs(Dm - ar1_limit_d(n, 1)).max() <= 1e-2


class TestProbe:
    def test_identity_sequence(self):
        n = 5
        steps = singular_approach_probe(lambda rho: np.eye(n), e_plus(n), [0.1, 0.5, 0.9])
        Pi = np.eye(n) - np.ones((n, n)) / n
        for st in steps:
            np.testing.assert_allclose(st.D, Pi / (n - 1), atol=1e-14)
            np.testing.assert_allclose(st.cross, 0.0, atol=1e-14)

    @pytest.mark.parametrize("endpoint", [1, -1])
    def test_ar1_limits(self, endpoint):
        n = 8
        z = e_plus(n) if endpoint == 1 else e_minus(n)
        rhos = [endpoint * (1 - 10.0**-m) for m in (2, 3, 4)]
        steps = singular_approach_probe(lambda rho: ar1_matrix(n, rho), z, rhos)
        errs = [np.abs(s.D - ar1_limit_d(n, endpoint)).max() for s in steps]
        assert errs[0] > errs[1] > errs[2]
        assert errs[2] <= 1e-2
        assert np.abs(steps[2].cross).max() <= 1e-2
