from __future__ import annotations

import numpy as np
import pytest

from robustsize.covariance import e_minus, e_plus, harmonic_basis, unit_vector
from robustsize.diagnostics import (
    TAG_AR1,
    TAG_AR2,
    TAG_GLS,
    TAG_HET,
    InapplicableError,
    Pattern,
    Verdict,
    audit,
    audit_ar1_weighted,
    audit_ar2,
    audit_gls,
    audit_het,
    estimate_k_bounds,
    genericity_probe,
    genericity_verdicts,
)
from robustsize.estimators import LagWindow, RhoEstimatorSpec
from robustsize.model import LinearModel, Restriction
from robustsize.statistics import TestDefinition, build_adjusted
from robustsize.streams import McConfig


def location(n: int) -> LinearModel:
    return LinearModel(np.ones((n, 1)))


R1 = Restriction([1.0], 0.0)


def bartlett(M: float, C: float) -> TestDefinition:
    return TestDefinition.weighted(LagWindow("bartlett", M), C)


class TestAr1Audit:
    @pytest.mark.parametrize("M", [1.0, 2.5, 7.0])
    @pytest.mark.parametrize("C", [0.5, 2.0, 40.0])
    @pytest.mark.parametrize("n", [7, 10])
    def test_location_size_one(self, n, M, C):
        rep = audit_ar1_weighted(location(n), R1, bartlett(M, C))
        assert rep.verdict is Verdict.SIZE_ONE
        assert rep.theorem == TAG_AR1
        assert rep.evidence[0].rank_b == 0

    def test_location_even_power_zero_also(self):
        rep = audit_ar1_weighted(location(10), R1, bartlett(4.0, 2.0))
        assert Pattern.POWER_ZERO in rep.patterns
        assert rep.evidence[1].comparison == "lt"

    def test_positive_case(self):
        rng = np.random.default_rng(0)
        X = np.column_stack([e_plus(10), e_minus(10), rng.standard_normal(10)])
        rep = audit_ar1_weighted(LinearModel(X), Restriction([[0, 0, 1.0]], 0.0), bartlett(3.0, 2.0))
        assert rep.verdict is Verdict.POSITIVE_CASE

    def test_trivial_breakdown(self):
        X = np.column_stack([unit_vector(6, 0), np.arange(6.0)])
        rep = audit_ar1_weighted(LinearModel(X), Restriction([[1.0, 0.0]], 0.0), bartlett(2.0, 2.0))
        assert rep.verdict is Verdict.TRIVIAL_BREAKDOWN

    def test_adjusted_change_in_mean(self):
        n = 12
        X = np.column_stack([np.ones(n), (np.arange(1, n + 1) > 6).astype(float)])
        m, restr = LinearModel(X), Restriction([[0.0, 1.0]], 0.0)
        defn = bartlett(4.0, 2.0)
        assert audit(m, restr, defn).verdict is Verdict.POWER_ZERO_AND_BIASED
        adj = build_adjusted(m, restr)
        assert audit(m, restr, defn.with_adjustment(adj)).verdict is Verdict.POSITIVE_CASE

    def test_report_serializes(self):
        d = audit(location(6), R1, bartlett(2.0, 2.0)).as_dict()
        assert set(d) >= {"verdict", "theorem", "evidence", "assumptions"}
        assert set(d["evidence"][0]) >= {"direction", "rankB", "T", "C", "flags"}
        assert d["assumptions"]["RandX"] is True


class TestAr2Audit:
    def test_seasonal_design_size_one(self):
        n, nu0 = 12, np.pi / 3
        X = np.column_stack([harmonic_basis(n, nu0).basis, e_plus(n)])
        restr = Restriction(np.eye(3)[:2], np.zeros(2))
        rep = audit_ar2(LinearModel(X), restr, bartlett(3.0, 2.0), nu_grid=[0.0, nu0, np.pi])
        assert rep.verdict is Verdict.SIZE_ONE
        assert rep.theorem == TAG_AR2
        assert rep.evidence[1].pattern is Pattern.SIZE_ONE_DEGENERATE

    def test_endpoints_reproduce_ar1(self):
        defn = bartlett(3.0, 2.0)
        a = audit_ar2(location(8), R1, defn, nu_grid=[0.0, np.pi])
        b = audit_ar1_weighted(location(8), R1, defn)
        assert a.verdict is b.verdict
        assert [e.pattern for e in a.evidence] == [e.pattern for e in b.evidence]

    def test_interior_rank(self):
        rep = audit_ar2(location(8), R1, bartlett(3.0, 2.0), nu_grid=[np.pi / 5])
        assert rep.evidence[0].rank_b == 1

    def test_family_restriction(self):
        with pytest.raises(ValueError):
            audit_ar2(location(8), R1, TestDefinition.het())


class TestGlsAudit:
    def test_yule_walker_location(self):
        rep = audit_gls(location(10), R1, RhoEstimatorSpec(), 2.0)
        assert rep.verdict is Verdict.SIZE_ONE and rep.theorem == TAG_GLS

    def test_positive_case(self):
        X = np.column_stack([e_plus(10), e_minus(10), np.arange(10.0)])
        rep = audit_gls(LinearModel(X), Restriction([[0, 0, 1.0]], 0.0), RhoEstimatorSpec(), 2.0)
        assert rep.verdict is Verdict.POSITIVE_CASE

    def test_ols_ar1_family(self):
        rep = audit_gls(location(10), R1, RhoEstimatorSpec(), 2.0, "ols-ar1")
        assert rep.verdict is Verdict.SIZE_ONE

    def test_span_flags_recorded(self):
        rep = audit_gls(location(10), R1, RhoEstimatorSpec(), 2.0)
        assert rep.evidence[0].flags

    def test_estimator_limits_validated(self):
        X = np.random.default_rng(1).standard_normal((5, 4))
        with pytest.raises(ValueError):
            audit_gls(LinearModel(X), Restriction([[1.0, 0, 0, 0]], 0.0), RhoEstimatorSpec(2, 1), 2.0)


class TestHetAudit:
    def test_below_threshold(self):
        rep = audit_het(location(6), R1, "HC0", 1.1)
        assert rep.verdict is Verdict.SIZE_ONE and rep.theorem == TAG_HET

    def test_above_threshold(self):
        assert audit_het(location(6), R1, "HC0", 1.3).verdict is Verdict.POWER_ZERO_AND_BIASED

    def test_uncorrected_f(self):
        assert audit_het(location(6), R1, "F", 1.5).verdict is Verdict.POWER_ZERO_AND_BIASED

    def test_tie(self):
        # T_Het(e_i) = n/(n-1) = 1.2 exactly at n = 6
        assert audit_het(location(6), R1, "HC0", 1.2).verdict is Verdict.BOUNDARY_TIE


class TestGenericity:
    def test_fraction_one(self):
        defn = bartlett(3.0, 2.0)
        assert genericity_probe(8, 2, Restriction([[0.0, 1.0]], 0.0), defn, 200, 3) == 1.0

    def test_intercept_mode(self):
        defn = bartlett(3.0, 2.0)
        assert genericity_probe(8, 2, Restriction([[1.0, 1.0]], 0.0), defn, 100, 4, intercept=True) == 1.0

    def test_single_sample_deterministic(self):
        defn = bartlett(3.0, 2.0)
        restr = Restriction([[0.0, 1.0]], 0.0)
        assert genericity_verdicts(8, 2, restr, defn, 1, 11) == genericity_verdicts(8, 2, restr, defn, 1, 11)


class TestKBounds:
    def test_yule_walker_is_one(self):
        kb = estimate_k_bounds(location(10), R1, RhoEstimatorSpec(), "e+", McConfig(5000, 1))
        assert kb.k1 == pytest.approx(1.0, abs=3 * max(kb.se, 1e-3))
        assert kb.k1 == kb.k2

    def test_ordering_other_spec(self):
        kb = estimate_k_bounds(location(10), R1, RhoEstimatorSpec(2, 1), "e+", McConfig(5000, 2))
        assert kb.k1 <= kb.k2 + 3 * kb.se
        assert 0.0 < kb.k1 < 1.0

    def test_inapplicable(self):
        with pytest.raises(InapplicableError):
            estimate_k_bounds(location(10), R1, RhoEstimatorSpec(), "e-", McConfig(200, 1))
