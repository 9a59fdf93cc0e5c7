"""Property-based checks of the structural invariants."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from robustsize.covariance import ar1_inverse, ar1_matrix, e_minus
from robustsize.estimators import (
    LagWindow,
    RhoEstimatorSpec,
    b_matrix,
    omega_weighted,
    rho_hat,
)
from robustsize.model import (
    LinearModel,
    Restriction,
    maximal_invariant,
    null_representative,
    restricted_ols,
    sign_normalize,
)
from robustsize.montecarlo import GaussianSampler, simulate_statistic
from robustsize.statistics import TestDefinition, build_adjusted, evaluate, evaluate_adjusted
from robustsize.streams import McConfig

SEEDS = st.integers(0, 2**32 - 1)
FAST = settings(max_examples=60, deadline=None)


def random_problem(seed: int, n_lo: int = 5, n_hi: int = 20):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(n_lo, n_hi + 1))
    k = int(rng.integers(1, min(4, n - 2) + 1))
    q = int(rng.integers(1, k + 1))
    X = rng.standard_normal((n, k))
    R = rng.standard_normal((q, k))
    r = rng.standard_normal(q)
    return rng, LinearModel(X), Restriction(R, r)


def definitions(n: int, rng) -> list[TestDefinition]:
    G = rng.standard_normal((n, n))
    return [
        TestDefinition.weighted(LagWindow("bartlett", float(rng.uniform(0.5, n)))),
        TestDefinition.weighted(LagWindow("parzen", float(rng.uniform(0.5, n)))),
        TestDefinition.general_quadratic(G @ G.T / n),
        TestDefinition.eicker(),
        TestDefinition.het("HC2"),
        TestDefinition.fgls(RhoEstimatorSpec()),
        TestDefinition.fgls(RhoEstimatorSpec(2, 1)),
        TestDefinition.ols_ar1(),
        TestDefinition.uncorrected_f(),
    ]


def group_action(model: LinearModel, restriction: Restriction, y: np.ndarray, rng) -> np.ndarray:
    """``alpha (y - mu0) + mu0'`` with both means in the null space."""
    base = null_representative(model, restriction)
    Q = np.linalg.svd(restriction.R)[2][restriction.q:].T  # null space of R
    mu0 = base.mu0 + model.X @ (Q @ rng.standard_normal(Q.shape[1])) if Q.size else base.mu0
    mu1 = base.mu0 + model.X @ (Q @ rng.standard_normal(Q.shape[1])) if Q.size else base.mu0
    alpha = float(rng.choice([-1.0, 1.0]) * rng.uniform(0.2, 5.0))
    return alpha * (y - mu0) + mu1


class TestInvariance:
    @FAST
    @given(SEEDS)
    def test_statistics_invariant_under_null_group(self, seed):
        rng, model, restr = random_problem(seed)
        if model.k > model.n - 3:
            return
        y = rng.standard_normal(model.n)
        for defn in definitions(model.n, rng):
            a = evaluate(defn, model, restr, y).value
            b = evaluate(defn, model, restr, group_action(model, restr, y, rng)).value
            assert b == pytest.approx(a, rel=1e-9, abs=1e-9)

    @FAST
    @given(SEEDS)
    def test_maximal_invariant(self, seed):
        rng, model, restr = random_problem(seed)
        y = rng.standard_normal(model.n)
        h = maximal_invariant(model, restr, y)
        h2 = maximal_invariant(model, restr, group_action(model, restr, y, rng))
        np.testing.assert_allclose(h2, h, atol=1e-9)
        assert np.linalg.norm(h) == pytest.approx(1.0) or np.linalg.norm(h) == 0.0

    @FAST
    @given(SEEDS, st.floats(-50, 50, allow_nan=False))
    def test_adjusted_invariant_along_e_minus(self, seed, c):
        rng = np.random.default_rng(seed)
        n = 2 * int(rng.integers(4, 9))
        t0 = 2 * int(rng.integers(1, n // 2))
        X = np.column_stack([np.ones(n), (np.arange(1, n + 1) > t0).astype(float)])
        model, restr = LinearModel(X), Restriction([[0.0, 1.0]], 0.0)
        adj = build_adjusted(model, restr)
        defn = TestDefinition.weighted(LagWindow("bartlett", float(rng.uniform(1, n))))
        y = rng.standard_normal(n)
        a = evaluate_adjusted(adj, defn, y).value
        assert evaluate_adjusted(adj, defn, y + c * e_minus(n)).value == pytest.approx(a, rel=1e-9, abs=1e-9)


class TestAlgebra:
    @FAST
    @given(SEEDS)
    def test_sandwich_equals_bwb(self, seed):
        rng, model, restr = random_problem(seed, 3, 30)
        y = rng.standard_normal(model.n)
        w = LagWindow(str(rng.choice(["bartlett", "parzen", "qs"])), float(rng.uniform(0.3, model.n))).weights(model.n)
        B = b_matrix(model, restr, y)
        ref = B @ w.matrix @ B.T
        got = omega_weighted(model, restr, y, w)
        assert np.linalg.norm(got - ref) <= 1e-10 * max(np.linalg.norm(ref), 1e-300)

    @FAST
    @given(st.integers(2, 60), st.floats(-0.999, 0.999))
    def test_ar1_inverse(self, n, rho):
        prod = ar1_matrix(n, rho) @ ar1_inverse(n, rho)
        assert np.abs(prod - np.eye(n)).max() <= 1e-8

    @FAST
    @given(SEEDS)
    def test_restricted_fit_satisfies_constraint(self, seed):
        rng, model, restr = random_problem(seed)
        y = rng.standard_normal(model.n)
        b, u = restricted_ols(model, restr, y)
        np.testing.assert_allclose(restr.R @ b, restr.r, atol=1e-9)
        np.testing.assert_allclose(u, y - model.X @ b, atol=1e-12)

    @given(st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=1, max_size=8))
    def test_sign_normalize(self, xs):
        x = np.array(xs)
        s = sign_normalize(x)
        nz = np.flatnonzero(s)
        if nz.size:
            assert s[nz[0]] > 0
        np.testing.assert_array_equal(sign_normalize(s), s)
        np.testing.assert_array_equal(np.abs(s), np.abs(x))


class TestEstimatorBounds:
    @settings(max_examples=200, deadline=None)
    @given(SEEDS)
    def test_yule_walker_inside_unit_interval(self, seed):
        rng, model, _ = random_problem(seed, 3, 40)
        y = rng.standard_normal(model.n) * rng.uniform(1e-3, 1e3)
        assert abs(rho_hat(model, y, RhoEstimatorSpec())) < 1.0

    @FAST
    @given(SEEDS)
    def test_weighted_omega_psd(self, seed):
        rng, model, restr = random_problem(seed)
        w = LagWindow("bartlett", float(rng.uniform(0.5, model.n))).weights(model.n)
        om = omega_weighted(model, restr, rng.standard_normal(model.n), w)
        assert np.linalg.eigvalsh(om).min() >= -1e-12 * max(np.abs(om).max(), 1.0)


class TestMonteCarlo:
    @settings(max_examples=15, deadline=None)
    @given(SEEDS, st.floats(0.0, 0.99))
    def test_rejection_nonincreasing_in_c(self, seed, rho):
        model = LinearModel(np.ones((8, 1)))
        restr = Restriction([1.0], 0.0)
        defn = TestDefinition.weighted(LagWindow("bartlett", 3.0), 1.0)
        T = simulate_statistic(defn, model, restr, GaussianSampler(np.zeros(8), 1.0, ar1_matrix(8, rho)),
                               McConfig(500, seed % 2**63))
        grid = np.linspace(0.1, 20, 40)
        p = [(T >= c).mean() for c in grid]
        assert all(a >= b for a, b in zip(p, p[1:]))

    @settings(max_examples=20, deadline=None)
    @given(SEEDS)
    def test_sampler_square_root(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 15))
        G = rng.standard_normal((n, n))
        S = G @ G.T + 1e-3 * np.eye(n)
        s2 = float(rng.uniform(0.1, 10))
        smp = GaussianSampler(np.zeros(n), s2, S)
        np.testing.assert_allclose(smp.scale @ smp.scale.T, s2 * S, atol=1e-8 * max(1.0, s2 * np.abs(S).max()))
