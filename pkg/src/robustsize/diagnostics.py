"""Mechanical audits of size-one and power-zero conditions.

Each audit inspects the statistic along the directions in which the
covariance model can concentrate (``e+`` and ``e-`` for AR(1), harmonic
planes ``span E(nu)`` for AR(2), standard basis vectors for
heteroskedasticity). At a direction ``z`` three patterns are checked:

* ``size-one``: ``rank B(z) = q`` and ``T(z + mu0) > C``;
* ``power-zero``: ``rank B(z) = q`` and ``T(z + mu0) < C``;
* ``size-one-degenerate``: ``B(z) = 0`` while ``R beta_hat(z) != 0``.

The audits report which patterns fire and a verdict. They are
sufficient conditions only, so a design where nothing fires is
reported as ``Inconclusive`` rather than as safe.
"""

from __future__ import annotations

import enum
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .covariance import ar1_limit_d, e_minus, e_plus, harmonic_basis, unit_vector
from .estimators import (
    HetVariant,
    RhoEstimatorSpec,
    b_matrix,
    check_r_and_x,
    check_weight_pd,
    restriction_operator,
)
from .model import LinearModel, Restriction, numerical_rank, null_representative
from .statistics import Family, TestDefinition, evaluate, prepare
from .streams import (
    STREAM_DESIGNS,
    STREAM_DIRECTIONS,
    STREAM_GAUSSIAN,
    McConfig,
    map_chunks,
    normal_block,
    uniform_block,
)


class Verdict(str, enum.Enum):
    SIZE_ONE = "SizeOne"
    POWER_ZERO_AND_BIASED = "PowerZeroAndBiased"
    TRIVIAL_BREAKDOWN = "TrivialBreakdown"
    POSITIVE_CASE = "PositiveCase"
    BOUNDARY_TIE = "BoundaryTie"
    INCONCLUSIVE = "Inconclusive"


class Pattern(str, enum.Enum):
    SIZE_ONE = "size-one"
    POWER_ZERO = "power-zero"
    SIZE_ONE_DEGENERATE = "size-one-degenerate"
    K_BOUND = "k-bound"
    TIE = "tie"
    PURGED = "purged"
    NONE = "none"
    MIXED = "mixed"


# descriptive tags for the result each audit instantiates
TAG_AR1 = "ar1-concentration/autocorrelation-robust"
TAG_AR2 = "ar2-harmonic-concentration/autocorrelation-robust"
TAG_GLS = "ar1-concentration/ar1-plugin"
TAG_HET = "heteroskedastic-concentration/sandwich"


@dataclass(frozen=True)
class Evidence:
    """Condition values observed at one direction."""

    direction: str
    rank_b: int
    statistic: float
    C: float
    comparison: str
    pattern: Pattern
    flags: tuple[str, ...] = ()

    def as_dict(self) -> dict:
        return {
            "direction": self.direction,
            "rankB": self.rank_b,
            "T": self.statistic,
            "C": self.C,
            "comparison": self.comparison,
            "pattern": self.pattern.value,
            "flags": list(self.flags),
        }


@dataclass(frozen=True)
class DiagnosticReport:
    """Verdict plus the evidence table that produced it."""

    verdict: Verdict
    theorem: str
    evidence: tuple[Evidence, ...]
    patterns: tuple[Pattern, ...] = ()
    assumptions: dict = field(default_factory=dict)
    notes: tuple[str, ...] = ()

    def as_dict(self) -> dict:
        return {
            "verdict": self.verdict.value,
            "theorem": self.theorem,
            "patterns": [p.value for p in self.patterns],
            "evidence": [e.as_dict() for e in self.evidence],
            "assumptions": dict(self.assumptions),
            "notes": list(self.notes),
        }


class _Context:
    """Quantities shared by all directions of one audit."""

    def __init__(self, model: LinearModel, restriction: Restriction, defn: TestDefinition):
        restriction.check_compatible(model)
        self.model, self.restriction, self.defn = model, restriction, defn
        self.A = restriction_operator(model, restriction)
        self.a_norm = float(np.linalg.norm(self.A))
        self.mu0 = null_representative(model, restriction).mu0
        self.tol = model.tol
        self.C = defn.critical_value

    def in_span(self, z: np.ndarray) -> bool:
        return self.model.in_span(z)

    def rb_nonzero(self, z: np.ndarray) -> bool:
        return bool(np.linalg.norm(self.A @ z) > self.tol.membership * self.a_norm * np.linalg.norm(z))

    def rank_b(self, z: np.ndarray) -> int:
        B = b_matrix(self.model, self.restriction, z)
        if self.defn.family is Family.GQ:
            B = B @ self.defn.wstar
        floor = self.tol.membership * self.a_norm * np.linalg.norm(z)
        return numerical_rank(B, self.tol, floor=floor)

    def compare(self, T: float) -> str:
        if abs(T - self.C) <= self.tol.tie * (1.0 + self.C):
            return "tie"
        return "gt" if T > self.C else "lt"


def _classify(ctx: _Context, z: np.ndarray, label: str, span_rank: bool) -> Evidence:
    """Evaluate the three patterns at direction ``z``.

    With ``span_rank`` the rank condition is replaced by ``z`` outside
    span(X) and the zero condition by ``z`` inside span(X); this is the
    form that applies to estimators whose covariance is definite exactly
    off span(X).
    """
    q = ctx.restriction.q
    rank = ctx.rank_b(z)
    inside = ctx.in_span(z)
    out = evaluate(ctx.defn, ctx.model, ctx.restriction, z + ctx.mu0)
    flags = (out.exceptional_set,) if out.exceptional else ()
    rank_ok = (not inside) if span_rank else rank == q
    zero_ok = inside if span_rank else rank == 0
    rb = ctx.rb_nonzero(z)
    comparison = "n/a"
    if rank_ok:
        comparison = ctx.compare(out.value)
        pattern = {"tie": Pattern.TIE, "gt": Pattern.SIZE_ONE, "lt": Pattern.POWER_ZERO}[comparison]
    elif zero_ok and rb:
        pattern = Pattern.SIZE_ONE_DEGENERATE
    elif inside and not rb:
        pattern = Pattern.PURGED
    else:
        pattern = Pattern.NONE
    return Evidence(label, rank, float(out.value), ctx.C, comparison, pattern, flags)


def _aggregate(patterns: list[Pattern], all_purged: bool) -> Verdict:
    if all_purged:
        return Verdict.POSITIVE_CASE
    if Pattern.TIE in patterns:
        return Verdict.BOUNDARY_TIE
    if Pattern.SIZE_ONE in patterns or Pattern.SIZE_ONE_DEGENERATE in patterns:
        return Verdict.SIZE_ONE
    if Pattern.POWER_ZERO in patterns:
        return Verdict.POWER_ZERO_AND_BIASED
    return Verdict.INCONCLUSIVE


def _fired(patterns: list[Pattern]) -> tuple[Pattern, ...]:
    keep = (Pattern.SIZE_ONE, Pattern.SIZE_ONE_DEGENERATE, Pattern.POWER_ZERO, Pattern.K_BOUND, Pattern.TIE)
    return tuple(p for p in keep if p in patterns)


def _weight_assumption(defn: TestDefinition, n: int) -> str | None:
    if defn.family is Family.WEIGHTED:
        return check_weight_pd(defn.window.weights(n)).value
    return None


def _breakdown(ctx: _Context, theorem: str, assumptions: dict) -> DiagnosticReport:
    return DiagnosticReport(
        Verdict.TRIVIAL_BREAKDOWN, theorem, (), (), assumptions,
        ("the covariance estimator is singular for every sample point",),
    )


def audit_ar1_weighted(model: LinearModel, restriction: Restriction, defn: TestDefinition) -> DiagnosticReport:
    """Audit a weighted-autocovariance, general quadratic or Eicker test against AR(1) concentration.

    Parameters
    ----------
    defn : TestDefinition
        Family must be ``weighted``, ``gq`` or ``eicker``; its critical value is ``C``.
    """
    if defn.family not in (Family.WEIGHTED, Family.GQ, Family.EICKER):
        raise ValueError("audit_ar1_weighted covers the weighted, gq and eicker families")
    model_w, restriction_w = defn.working(model, restriction)
    defn_w = defn.with_adjustment(None)
    ctx = _Context(model_w, restriction_w, defn_w)
    span_rank = defn.family is Family.EICKER
    randx = check_r_and_x(model_w, restriction_w)[0]
    assumptions = {"AW": _weight_assumption(defn, model_w.n), "RandX": randx}
    if not span_rank and not randx:
        return _breakdown(ctx, TAG_AR1, assumptions)
    n = model_w.n
    evidence = [_classify(ctx, e_plus(n), "e+", span_rank), _classify(ctx, e_minus(n), "e-", span_rank)]
    pats = [e.pattern for e in evidence]
    verdict = _aggregate(pats, all(p is Pattern.PURGED for p in pats))
    return DiagnosticReport(verdict, TAG_AR1, tuple(evidence), _fired(pats), assumptions)


def default_nu_grid() -> np.ndarray:
    """``nu = j pi / 64`` for j = 0..64."""
    return np.arange(65) * np.pi / 64.0


def audit_ar2(
    model: LinearModel,
    restriction: Restriction,
    defn: TestDefinition,
    nu_grid: np.ndarray | None = None,
    direction_samples: int = 32,
    seed: int = 0,
) -> DiagnosticReport:
    """Audit against AR(2) concentration on the harmonic planes ``span E(nu)``.

    Within a plane the patterns are evaluated at ``direction_samples``
    random unit directions and asserted only when all samples agree;
    otherwise that frequency counts as inconclusive.
    """
    if defn.family not in (Family.WEIGHTED, Family.GQ, Family.EICKER):
        raise ValueError("audit_ar2 covers the weighted, gq and eicker families")
    model_w, restriction_w = defn.working(model, restriction)
    n = model_w.n
    if n < 3:
        raise ValueError("the harmonic audit needs n >= 3")
    ctx = _Context(model_w, restriction_w, defn.with_adjustment(None))
    span_rank = defn.family is Family.EICKER
    randx = check_r_and_x(model_w, restriction_w)[0]
    assumptions = {"AW": _weight_assumption(defn, n), "RandX": randx}
    if not span_rank and not randx:
        return _breakdown(ctx, TAG_AR2, assumptions)
    grid = default_nu_grid() if nu_grid is None else np.asarray(nu_grid, dtype=float)
    angles = 2.0 * np.pi * uniform_block(seed, STREAM_DIRECTIONS, 0, 1, max(direction_samples, 1))[0]
    evidence, per_nu = [], []
    for nu in grid:
        space = harmonic_basis(n, float(nu))
        if space.dim == 1:
            dirs = [space.basis[:, 0]]
        else:
            dirs = [space.basis @ np.array([np.cos(a), np.sin(a)]) for a in angles]
        rows = [_classify(ctx, z, f"nu={nu:.12g}", span_rank) for z in dirs]
        kinds = {r.pattern for r in rows}
        if Pattern.TIE in kinds:
            pattern = Pattern.TIE
        elif len(kinds) == 1:
            pattern = rows[0].pattern
        else:
            pattern = Pattern.MIXED
        first = rows[0]
        evidence.append(Evidence(first.direction, first.rank_b, first.statistic, first.C, first.comparison, pattern, first.flags))
        per_nu.append(pattern)
    verdict = _aggregate(per_nu, all(p is Pattern.PURGED for p in per_nu))
    notes = ()
    if Pattern.MIXED in per_nu:
        notes = ("some frequencies gave disagreeing patterns across sampled directions",)
    return DiagnosticReport(verdict, TAG_AR2, tuple(evidence), _fired(per_nu), assumptions, notes)


def audit_gls(
    model: LinearModel,
    restriction: Restriction,
    spec: RhoEstimatorSpec,
    C: float,
    family: Family | str = Family.FGLS,
) -> DiagnosticReport:
    """Audit the FGLS or OLS-AR(1) test against AR(1) concentration.

    When ``z`` lies in span(X) with ``R beta_hat(z) != 0`` the pattern
    ``k-bound`` is reported: size is then at least a constant that
    :func:`estimate_k_bounds` estimates. For the Yule-Walker estimator
    that constant is one and the pattern is upgraded to size one.
    """
    family = Family(family)
    if family not in (Family.FGLS, Family.OLS_AR1):
        raise ValueError("audit_gls covers the fgls and ols-ar1 families")
    spec.validate(model.n, model.k)
    defn = TestDefinition(family, C, rho_spec=spec)
    ctx = _Context(model, restriction, defn)
    n = model.n
    evidence = []
    for z, label in ((e_plus(n), "e+"), (e_minus(n), "e-")):
        rank = ctx.rank_b(z)
        at_z = evaluate(defn, model, restriction, z)
        inside = ctx.in_span(z)
        rb = ctx.rb_nonzero(z)
        out = evaluate(defn, model, restriction, z + ctx.mu0)
        flags = tuple(f for f in (at_z.exceptional_set,) if f)
        comparison = "n/a"
        if not at_z.exceptional:
            comparison = ctx.compare(out.value)
            pattern = {"tie": Pattern.TIE, "gt": Pattern.SIZE_ONE, "lt": Pattern.POWER_ZERO}[comparison]
        elif inside and rb:
            pattern = Pattern.SIZE_ONE_DEGENERATE if spec.is_yule_walker else Pattern.K_BOUND
        elif inside:
            pattern = Pattern.PURGED
        else:
            pattern = Pattern.NONE
        evidence.append(Evidence(label, rank, float(out.value), float(C), comparison, pattern, flags))
    pats = [e.pattern for e in evidence]
    verdict = _aggregate(pats, all(p is Pattern.PURGED for p in pats))
    notes = ()
    if Pattern.K_BOUND in pats:
        notes = ("size is bounded below by a constant K; estimate it with estimate_k_bounds",)
    assumptions = {"rho_estimator": spec.describe(), "k_le_a2_minus_a1": True}
    return DiagnosticReport(verdict, TAG_GLS, tuple(evidence), _fired(pats), assumptions, notes)


def audit_het(
    model: LinearModel, restriction: Restriction, variant: HetVariant | str, C: float
) -> DiagnosticReport:
    """Audit a heteroskedasticity-robust test against concentration on ``span(e_i)``.

    ``variant`` is one of ``HC0`` to ``HC3``, or ``"F"`` for the uncorrected
    F statistic. For the latter the rank condition becomes ``e_i`` outside
    span(X) and the zero condition ``e_i`` inside span(X).
    """
    uncorrected = str(variant).upper() in ("F", "UNCORRECTED")
    defn = TestDefinition.uncorrected_f(C) if uncorrected else TestDefinition.het(variant, C)
    ctx = _Context(model, restriction, defn)
    randx = check_r_and_x(model, restriction)[0]
    assumptions = {"RandX": randx, "variant": "F" if uncorrected else HetVariant(variant).value}
    if not uncorrected and not randx:
        return _breakdown(ctx, TAG_HET, assumptions)
    n = model.n
    evidence = [_classify(ctx, unit_vector(n, i), f"e_{i + 1}", uncorrected) for i in range(n)]
    pats = [e.pattern for e in evidence]
    verdict = _aggregate(pats, False)
    return DiagnosticReport(verdict, TAG_HET, tuple(evidence), _fired(pats), assumptions)


def audit(model: LinearModel, restriction: Restriction, defn: TestDefinition) -> DiagnosticReport:
    """Run the audit that matches the family of ``defn``."""
    fam = defn.family
    if fam in (Family.WEIGHTED, Family.GQ, Family.EICKER):
        return audit_ar1_weighted(model, restriction, defn)
    model_w, restriction_w = defn.working(model, restriction)
    if fam in (Family.FGLS, Family.OLS_AR1):
        return audit_gls(model_w, restriction_w, defn.rho_spec, defn.critical_value, fam)
    variant = "F" if fam is Family.F else defn.variant
    return audit_het(model_w, restriction_w, variant, defn.critical_value)


# ---------------------------------------------------------------------------
# genericity


def genericity_verdicts(
    n: int,
    k: int,
    restriction: Restriction,
    defn: TestDefinition,
    samples: int,
    seed: int,
    intercept: bool = False,
) -> Counter:
    """Verdict counts over random Gaussian designs (first column ``e+`` if ``intercept``)."""
    if samples < 1:
        raise ValueError("samples must be at least 1")
    draws = normal_block(seed, STREAM_DESIGNS, 0, samples, n * k)
    counts: Counter = Counter()
    for row in draws:
        X = row.reshape(n, k)
        if intercept:
            X[:, 0] = 1.0
        counts[audit(LinearModel(X), restriction, defn).verdict] += 1
    return counts


def genericity_probe(
    n: int,
    k: int,
    restriction: Restriction,
    defn: TestDefinition,
    samples: int,
    seed: int,
    intercept: bool = False,
) -> float:
    """Fraction of random designs on which a size-one or power-zero verdict is reached."""
    counts = genericity_verdicts(n, k, restriction, defn, samples, seed, intercept)
    miss = counts[Verdict.INCONCLUSIVE] + counts[Verdict.BOUNDARY_TIE]
    return (samples - miss) / samples


# ---------------------------------------------------------------------------
# K bounds


class InapplicableError(ValueError):
    """Raised when the preconditions of a bound are not met."""


@dataclass(frozen=True)
class KBounds:
    k1: float
    k2: float
    se: float
    reps: int
    seed: int


def _psd_sqrt(M: np.ndarray) -> np.ndarray:
    ev, vec = np.linalg.eigh(0.5 * (M + M.T))
    return (vec * np.sqrt(np.clip(ev, 0.0, None))) @ vec.T


def estimate_k_bounds(
    model: LinearModel,
    restriction: Restriction,
    spec: RhoEstimatorSpec,
    direction: str,
    mc: McConfig,
    family: Family | str = Family.FGLS,
) -> KBounds:
    """Monte Carlo estimates of the lower constants ``K1 <= K2`` for a concentrating direction.

    With ``Z = z`` one-dimensional, ``Sbar^{1/2} = z z' / ||z||`` and
    ``A = 1``. The quadratic form ``v' Omega^{-1}(W) v`` with
    ``W = (Sbar^{1/2} + D^{1/2}) G`` and ``v = R beta_hat(z)`` carries the
    factor ``gamma^2``, so its sign, and hence both constants, do not
    depend on ``gamma``. On the exceptional set the form is taken as zero,
    which counts as nonnegative.
    """
    family = Family(family)
    if family not in (Family.FGLS, Family.OLS_AR1):
        raise ValueError("K bounds are defined for the fgls and ols-ar1 families")
    if direction not in ("e+", "e-"):
        raise ValueError("direction must be 'e+' or 'e-'")
    n = model.n
    z = e_plus(n) if direction == "e+" else e_minus(n)
    A = restriction_operator(model, restriction)
    v = A @ z
    if not (model.in_span(z) and np.linalg.norm(v) > model.tol.membership * np.linalg.norm(A) * np.linalg.norm(z)):
        raise InapplicableError(f"need {direction} in span(X) with R beta_hat({direction}) != 0")
    D_half = _psd_sqrt(ar1_limit_d(n, 1 if direction == "e+" else -1))
    S_half = np.outer(z, z) / np.linalg.norm(z)
    L = S_half + D_half
    stat = prepare(TestDefinition(family, 1.0, rho_spec=spec), model, restriction)

    def run(start: int, count: int) -> int:
        G = normal_block(mc.seed, STREAM_GAUSSIAN, start, count, n)
        _, omega, codes = stat.components(G @ L.T)
        ok = codes == 0
        xi = np.zeros(count)
        if np.any(ok):
            sol = np.linalg.solve(omega[ok], np.broadcast_to(v, (int(ok.sum()), v.size))[..., None])[..., 0]
            xi[ok] = sol @ v
        return int(np.sum(xi >= 0.0))

    hits = sum(map_chunks(run, mc.reps, mc.chunk))
    p = hits / mc.reps
    se = float(np.sqrt(p * (1.0 - p) / mc.reps))
    return KBounds(k1=p, k2=p, se=se, reps=mc.reps, seed=mc.seed)
