"""Test statistics and the adjusted (purged) tests.

Every statistic has the Wald form ``(R b - r)' Omega^{-1} (R b - r)`` with
family-specific ``b`` and ``Omega``. On the exceptional set of a family
the statistic is zero and the outcome carries the set's name.

Two evaluation paths are provided. :func:`evaluate` works on one vector
and calls the reference estimators in :mod:`robustsize.estimators`.
:class:`PreparedStatistic` evaluates many vectors at once with
precomputed design quantities and is what the simulation engine uses.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np

from .covariance import e_minus, e_plus
from .estimators import (
    HetVariant,
    LagWindow,
    RhoEstimatorSpec,
    check_r_and_x,
    fgls_components,
    het_factors,
    ols_ar1_omega,
    omega_eicker,
    omega_general_quadratic,
    omega_het,
    omega_weighted,
    restriction_operator,
)
from .model import DEFAULT_TOLERANCES, LinearModel, Restriction, Tolerances, numerical_rank


class Family(str, enum.Enum):
    WEIGHTED = "weighted"
    GQ = "gq"
    EICKER = "eicker"
    HET = "het"
    FGLS = "fgls"
    OLS_AR1 = "ols-ar1"
    F = "f"


class ExceptionalSet(enum.IntEnum):
    NONE = 0
    SINGULAR_OMEGA = 1
    N0 = 2
    N1 = 3
    N2 = 4
    N2_STAR = 5
    N0_STAR = 6
    IN_SPAN = 7

    @property
    def label(self) -> str | None:
        return _SET_LABELS[self]


_SET_LABELS = {
    ExceptionalSet.NONE: None,
    ExceptionalSet.SINGULAR_OMEGA: "singular-omega",
    ExceptionalSet.N0: "N0",
    ExceptionalSet.N1: "N1",
    ExceptionalSet.N2: "N2",
    ExceptionalSet.N2_STAR: "N2*",
    ExceptionalSet.N0_STAR: "N0*",
    ExceptionalSet.IN_SPAN: "span(X)",
}


# ---------------------------------------------------------------------------
# adjusted designs


class AdjustmentError(ValueError):
    """Base class for failures of the adjustment procedure."""


class AdjustmentImpossibleError(AdjustmentError):
    """The enlarged design has as many columns as observations or fails the rank assumption."""


class SizeOneWarningError(AdjustmentError):
    """A rank-(k+1) design fails both side conditions; the test keeps size one."""


class NoScenarioError(AdjustmentError):
    """The membership pattern of ``e+`` and ``e-`` matches no adjustment scenario."""


class AdjustmentNotNeeded(AdjustmentError):
    """``e+`` and ``e-`` are already in span(X) with ``R beta_hat(e+-) = 0``."""


@dataclass(frozen=True, eq=False)
class AdjustedDesign:
    """Working design ``Xbar`` obtained by appending ``e+`` and/or ``e-``.

    The adjusted statistic is the ordinary statistic of the working model
    ``(Xbar, Rbar = (R, 0), r)``, since ``R betabar = Rbar thetabar``.
    """

    Xbar: np.ndarray
    Rbar: np.ndarray
    r: np.ndarray
    k: int
    scenario: int
    added_columns: tuple[str, ...]
    notes: tuple[str, ...] = ()
    tol: Tolerances = DEFAULT_TOLERANCES

    @property
    def model(self) -> LinearModel:
        return LinearModel(self.Xbar, self.tol)

    @property
    def restriction(self) -> Restriction:
        return Restriction(self.Rbar, self.r, self.tol)

    @property
    def ambiguous(self) -> bool:
        return bool(self.notes)

    def beta_bar(self, y: np.ndarray) -> np.ndarray:
        """``(I_k, 0) (Xbar'Xbar)^{-1} Xbar' y``."""
        return self.model.ols(y)[: self.k]

    def describe(self) -> dict:
        return {
            "scenario": self.scenario,
            "added_columns": list(self.added_columns),
            "k_bar": int(self.Xbar.shape[1]),
            "notes": list(self.notes),
        }


def _membership_ratio(model: LinearModel, v: np.ndarray) -> float:
    return float(np.linalg.norm(model.residuals(v)) / np.linalg.norm(v))


def _r_beta_is_zero(model: LinearModel, R: np.ndarray, z: np.ndarray, tol: float) -> bool:
    val = R @ model.ols(z)
    scale = np.linalg.norm(R) * np.linalg.norm(model.ols_operator, 2) * np.linalg.norm(z)
    return bool(np.linalg.norm(val) <= tol * scale)


def build_adjusted(model: LinearModel, restriction: Restriction, tol: float | None = None) -> AdjustedDesign:
    """Select the adjustment scenario and build the enlarged working design.

    Scenarios are tried in the order 1 to 5:

    1. ``e+`` in span(X) with ``R beta_hat(e+) = 0``, ``e-`` outside: append ``e-``.
    2. The mirror image: append ``e+``.
    3. Both outside and ``rank(X, e+, e-) = k + 2``: append both.
    4. Both outside, rank ``k + 1``: append ``e+`` if ``Rbar beta_bar(e-) = 0``.
    5. Otherwise append ``e-`` if ``Rbar beta_bar(e+) = 0``.

    Raises
    ------
    AdjustmentNotNeeded
        When no adjustment is required.
    NoScenarioError
        When ``e+`` or ``e-`` lies in span(X) with a nonzero ``R beta_hat``.
    SizeOneWarningError
        When neither side condition of the rank-(k+1) case holds.
    AdjustmentImpossibleError
        When ``kbar = n`` or the enlarged design violates the rank assumption.
    """
    restriction.check_compatible(model)
    tol = model.tol.membership if tol is None else tol
    n, k = model.n, model.k
    R = restriction.R
    ep, em = e_plus(n), e_minus(n)
    notes = []
    ratios = {"e+": _membership_ratio(model, ep), "e-": _membership_ratio(model, em)}
    for name, ratio in ratios.items():
        if tol / 100.0 < ratio < tol * 100.0:
            notes.append(f"membership of {name} in span(X) is within two decades of the tolerance ({ratio:.3e})")
    p_in, m_in = ratios["e+"] <= tol, ratios["e-"] <= tol

    def finish(cols: list[str], scenario: int) -> AdjustedDesign:
        extra = np.column_stack([ep if c == "e+" else em for c in cols])
        Xbar = np.column_stack([model.X, extra])
        kbar = Xbar.shape[1]
        if kbar >= n:
            raise AdjustmentImpossibleError(f"enlarged design would have {kbar} >= n = {n} columns")
        Rbar = np.column_stack([R, np.zeros((restriction.q, kbar - k))])
        try:
            bar_model = LinearModel(Xbar, model.tol)
        except ValueError as exc:
            raise AdjustmentImpossibleError(str(exc)) from exc
        ok, _ = check_r_and_x(bar_model, Restriction(Rbar, restriction.r, model.tol), tol)
        if not ok:
            raise AdjustmentImpossibleError("enlarged design violates the rank assumption on R and X")
        return AdjustedDesign(
            Xbar=Xbar, Rbar=Rbar, r=np.array(restriction.r), k=k, scenario=scenario,
            added_columns=tuple(cols), notes=tuple(notes), tol=model.tol,
        )

    if p_in and m_in:
        if _r_beta_is_zero(model, R, ep, tol) and _r_beta_is_zero(model, R, em, tol):
            raise AdjustmentNotNeeded("e+ and e- are in span(X) with R beta_hat = 0; the unadjusted test applies")
        raise NoScenarioError("e+ and e- are in span(X) but R beta_hat does not vanish at both")
    if p_in:
        if not _r_beta_is_zero(model, R, ep, tol):
            raise NoScenarioError("e+ is in span(X) with R beta_hat(e+) != 0")
        return finish(["e-"], 1)
    if m_in:
        if not _r_beta_is_zero(model, R, em, tol):
            raise NoScenarioError("e- is in span(X) with R beta_hat(e-) != 0")
        return finish(["e+"], 2)
    rank = numerical_rank(np.column_stack([model.X, ep, em]), model.tol)
    if rank == k + 2:
        return finish(["e+", "e-"], 3)
    for cols, other, scenario in ((["e+"], em, 4), (["e-"], ep, 5)):
        Xbar = np.column_stack([model.X, ep if cols == ["e+"] else em])
        Rbar = np.column_stack([R, np.zeros((restriction.q, 1))])
        if _r_beta_is_zero(LinearModel(Xbar, model.tol), Rbar, other, tol):
            return finish(cols, scenario)
    raise SizeOneWarningError("neither side condition holds for the rank k+1 case; the test has size one")


# ---------------------------------------------------------------------------
# test definitions and outcomes


@dataclass(frozen=True, eq=False)
class TestDefinition:
    """One test statistic family with its parameters and critical value ``C > 0``.

    Use the class-method constructors rather than filling fields by hand.
    """

    family: Family
    critical_value: float = 1.0
    window: LagWindow | None = None
    wstar: np.ndarray | None = None
    variant: HetVariant = HetVariant.HC0
    rho_spec: RhoEstimatorSpec = field(default_factory=RhoEstimatorSpec)
    adjustment: AdjustedDesign | None = None

    __test__ = False  # keep pytest from collecting this class

    def __post_init__(self):
        object.__setattr__(self, "family", Family(self.family))
        object.__setattr__(self, "variant", HetVariant(self.variant))
        if not (np.isfinite(self.critical_value) and self.critical_value > 0):
            raise ValueError(f"critical value must be positive and finite, got {self.critical_value}")
        if self.family is Family.WEIGHTED and self.window is None:
            raise ValueError("weighted test needs a lag window")
        if self.family is Family.GQ:
            if self.wstar is None:
                raise ValueError("general quadratic test needs a weight matrix")
            W = np.array(self.wstar, dtype=float)
            W.setflags(write=False)
            object.__setattr__(self, "wstar", W)

    @classmethod
    def weighted(cls, window: LagWindow, C: float = 1.0) -> "TestDefinition":
        return cls(Family.WEIGHTED, C, window=window)

    @classmethod
    def general_quadratic(cls, wstar: np.ndarray, C: float = 1.0) -> "TestDefinition":
        return cls(Family.GQ, C, wstar=wstar)

    @classmethod
    def eicker(cls, C: float = 1.0) -> "TestDefinition":
        return cls(Family.EICKER, C)

    @classmethod
    def het(cls, variant: HetVariant | str = HetVariant.HC0, C: float = 1.0) -> "TestDefinition":
        return cls(Family.HET, C, variant=HetVariant(variant))

    @classmethod
    def fgls(cls, spec: RhoEstimatorSpec = RhoEstimatorSpec(), C: float = 1.0) -> "TestDefinition":
        return cls(Family.FGLS, C, rho_spec=spec)

    @classmethod
    def ols_ar1(cls, spec: RhoEstimatorSpec = RhoEstimatorSpec(), C: float = 1.0) -> "TestDefinition":
        return cls(Family.OLS_AR1, C, rho_spec=spec)

    @classmethod
    def uncorrected_f(cls, C: float = 1.0) -> "TestDefinition":
        return cls(Family.F, C)

    def with_critical_value(self, C: float) -> "TestDefinition":
        return replace(self, critical_value=float(C))

    def with_adjustment(self, adj: AdjustedDesign | None) -> "TestDefinition":
        return replace(self, adjustment=adj)

    def working(self, model: LinearModel, restriction: Restriction) -> tuple[LinearModel, Restriction]:
        """The design and restriction the statistic is actually computed on."""
        if self.adjustment is None:
            return model, restriction
        return self.adjustment.model, self.adjustment.restriction

    def describe(self) -> dict:
        out: dict = {"family": self.family.value, "C": self.critical_value}
        if self.window is not None:
            out["window"] = self.window.describe()
        if self.family is Family.HET:
            out["variant"] = self.variant.value
        if self.family in (Family.FGLS, Family.OLS_AR1):
            out["rho_estimator"] = self.rho_spec.describe()
        if self.adjustment is not None:
            out["adjustment"] = self.adjustment.describe()
        return out


@dataclass(frozen=True)
class TestOutcome:
    """Value of a statistic at one point; zero on the exceptional set."""

    value: float
    exceptional: bool = False
    exceptional_set: str | None = None

    __test__ = False

    def rejects(self, C: float) -> bool:
        return self.value >= C


def _quadratic(v: np.ndarray, omega: np.ndarray) -> float:
    return float(v @ np.linalg.solve(omega, v))


def _singular(omega: np.ndarray, scale: float, zero: float) -> bool:
    if not np.all(np.isfinite(omega)):
        return True
    ev = np.linalg.eigvalsh(0.5 * (omega + omega.T))
    return bool(np.min(np.abs(ev)) <= zero * scale)


def _ar1_norm_bound(rho: float, n: int) -> float:
    """Gershgorin bound on the spectral norm of ``Lambda(rho)``."""
    a = abs(rho)
    return float(1.0 + 2.0 * np.sum(a ** np.arange(1, n)))


def evaluate(defn: TestDefinition, model: LinearModel, restriction: Restriction, y: np.ndarray) -> TestOutcome:
    """Evaluate the statistic of ``defn`` at a single observation vector.

    No division by q takes place except for the uncorrected F statistic.
    """
    model, restriction = defn.working(model, restriction)
    restriction.check_compatible(model)
    y = np.asarray(y, dtype=float)
    n, k, q = model.n, model.k, restriction.q
    zero = model.tol.zero(n)
    u = model.residuals(y)
    unorm, ynorm = np.linalg.norm(u), np.linalg.norm(y)
    u_zero = unorm <= zero * ynorm or unorm == 0.0
    A = restriction_operator(model, restriction)
    diff = A @ y - restriction.r
    fam = defn.family

    if fam in (Family.WEIGHTED, Family.GQ, Family.EICKER, Family.HET):
        if u_zero:
            return TestOutcome(0.0, True, ExceptionalSet.SINGULAR_OMEGA.label)
        a2 = np.linalg.norm(A) ** 2 * unorm**2
        if fam is Family.WEIGHTED:
            weights = defn.window.weights(n)
            omega = omega_weighted(model, restriction, y, weights)
            scale = a2 * np.linalg.norm(weights.matrix, 2)
        elif fam is Family.GQ:
            omega = omega_general_quadratic(model, restriction, y, defn.wstar)
            scale = a2 * np.linalg.norm(defn.wstar, 2)
        elif fam is Family.EICKER:
            omega = omega_eicker(model, restriction, y)
            scale = 2.0 * a2
        else:
            omega = omega_het(model, restriction, y, defn.variant)
            scale = a2 * float(np.max(het_factors(model, defn.variant)))
        if _singular(omega, scale, zero):
            return TestOutcome(0.0, True, ExceptionalSet.SINGULAR_OMEGA.label)
        return TestOutcome(_quadratic(diff, omega))

    if fam is Family.F:
        if u_zero:
            return TestOutcome(0.0, True, ExceptionalSet.IN_SPAN.label)
        middle = restriction.R @ model.xtx_inv(restriction.R.T)
        return TestOutcome((n - k) / q * _quadratic(diff, middle) / unorm**2)

    if fam is Family.FGLS:
        res = fgls_components(model, restriction, y, defn.rho_spec)
        f = res.flags
        if f.n2_star:
            label = "N0" if f.n0 else "N1" if f.n1 else "N2" if f.n2 else "N2*"
            return TestOutcome(0.0, True, label)
        return TestOutcome(_quadratic(restriction.R @ res.beta_tilde - restriction.r, res.omega_tilde))

    if fam is Family.OLS_AR1:
        omega, flags = ols_ar1_omega(model, restriction, y, defn.rho_spec)
        if flags.n0 or flags.n0_star:
            return TestOutcome(0.0, True, "N0" if flags.n0 else "N0*")
        return TestOutcome(_quadratic(diff, omega))

    raise ValueError(f"unsupported family {fam}")  # pragma: no cover


def evaluate_adjusted(adj: AdjustedDesign, defn: TestDefinition, y: np.ndarray) -> TestOutcome:
    """Adjusted statistic: the estimator internals use ``Xbar``, the restriction stays ``(R, r)``."""
    return evaluate(defn.with_adjustment(None), adj.model, adj.restriction, y)


def display_value(value: float, q: int, normalize_q: bool) -> float:
    """Optional division by q for display; the statistic itself is never normalized."""
    return value / q if normalize_q else value


# ---------------------------------------------------------------------------
# vectorized evaluation


def _lag_products(A: np.ndarray) -> np.ndarray:
    """``H_0 = A A'`` and ``H_j = sum_t (A_t A_{t+j}' + A_{t+j} A_t')`` for j >= 1, shape (n, q, q)."""
    q, n = A.shape
    H = np.empty((n, q, q))
    H[0] = A @ A.T
    for j in range(1, n):
        P = A[:, : n - j] @ A[:, j:].T
        H[j] = P + P.T
    return H


def _solve_quadratic(diff: np.ndarray, omega: np.ndarray) -> np.ndarray:
    if omega.shape[-1] == 1:
        return diff[:, 0] ** 2 / omega[:, 0, 0]
    sol = np.linalg.solve(omega, diff[..., None])[..., 0]
    return np.einsum("ij,ij->i", diff, sol)


def _min_abs_eig(omega: np.ndarray) -> np.ndarray:
    if omega.shape[-1] == 1:
        return np.abs(omega[:, 0, 0])
    sym = 0.5 * (omega + np.swapaxes(omega, -1, -2))
    return np.min(np.abs(np.linalg.eigvalsh(sym)), axis=-1)


def _rel_min_sv(M: np.ndarray) -> np.ndarray:
    s = np.linalg.svd(M, compute_uv=False)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(s[:, 0] > 0, s[:, -1] / s[:, 0], 0.0)


class PreparedStatistic:
    """Vectorized evaluator for one (definition, design, restriction) triple.

    Calling the object with an ``(m, n)`` array of observation rows returns
    the statistic values and integer :class:`ExceptionalSet` codes.
    Results agree with :func:`evaluate` up to rounding.
    """

    def __init__(self, defn: TestDefinition, model: LinearModel, restriction: Restriction):
        model, restriction = defn.working(model, restriction)
        restriction.check_compatible(model)
        self.defn = defn
        self.model = model
        self.restriction = restriction
        self.n, self.k, self.q = model.n, model.k, restriction.q
        self.A = restriction_operator(model, restriction)
        self.Q = np.array(model.orthonormal_basis)
        self.r = np.array(restriction.r)
        self.zero = model.tol.zero(self.n)
        self.a_norm2 = float(np.linalg.norm(self.A) ** 2)
        fam = defn.family
        if fam is Family.WEIGHTED:
            self.W = defn.window.weights(self.n).matrix
        elif fam is Family.GQ:
            self.W = np.array(defn.wstar)
        if fam in (Family.WEIGHTED, Family.GQ):
            self.w_norm = float(np.linalg.norm(self.W, 2))
        if fam in (Family.EICKER, Family.OLS_AR1):
            self.H = _lag_products(self.A).reshape(self.n, self.q * self.q)
        if fam is Family.HET:
            self.d = het_factors(model, defn.variant)
            self.AA = np.einsum("an,bn->abn", self.A, self.A)
        if fam is Family.F:
            self.middle = restriction.R @ model.xtx_inv(restriction.R.T)
        if fam in (Family.FGLS, Family.OLS_AR1):
            spec = defn.rho_spec
            self.a1, self.a2 = spec.a1, spec.a2(self.n)
        if fam is Family.FGLS:
            X = model.X
            self.G0 = X.T @ X
            self.G1 = X[1:-1].T @ X[1:-1]
            P = X[:-1].T @ X[1:]
            self.G2 = P + P.T

    def __call__(self, Y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        diff, omega, codes = self.components(Y)
        values = np.zeros(codes.shape[0])
        ok = codes == ExceptionalSet.NONE
        if np.any(ok):
            values[ok] = _solve_quadratic(diff[ok], omega[ok])
        return values, codes

    def components(self, Y: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Estimation error, covariance estimate and exceptional codes for each row.

        Returns ``diff`` of shape (m, q), ``omega`` of shape (m, q, q) and
        ``codes`` of shape (m,). The statistic is ``diff' omega^{-1} diff``
        wherever ``codes == 0``; elsewhere ``omega`` is NaN.
        """
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        m, q = Y.shape[0], self.q
        U = Y - (Y @ self.Q) @ self.Q.T
        unorm = np.linalg.norm(U, axis=1)
        ynorm = np.linalg.norm(Y, axis=1)
        u_zero = (unorm <= self.zero * ynorm) | (unorm == 0.0)
        diff = Y @ self.A.T - self.r
        codes = np.zeros(m, dtype=np.int8)
        fam = self.defn.family
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            if fam in (Family.WEIGHTED, Family.GQ, Family.EICKER, Family.HET):
                omega, scale = self._omega_robust(U, unorm)
                bad = u_zero | ~np.all(np.isfinite(omega.reshape(m, -1)), axis=1)
                bad |= _min_abs_eig(np.where(bad[:, None, None], 1.0, omega)) <= self.zero * scale
                codes[bad] = ExceptionalSet.SINGULAR_OMEGA
            elif fam is Family.F:
                sigma2 = unorm**2 / (self.n - self.k)
                omega = (q * sigma2)[:, None, None] * self.middle[None]
                codes[u_zero] = ExceptionalSet.IN_SPAN
            elif fam is Family.OLS_AR1:
                omega = self._ols_ar1(U, unorm, u_zero, codes)
            else:
                diff, omega = self._fgls(Y, U, unorm, u_zero, codes)
        omega = np.where((codes != 0)[:, None, None], np.nan, omega)
        return diff, omega, codes

    def _omega_robust(self, U: np.ndarray, unorm: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        m, q, A = U.shape[0], self.q, self.A
        fam = self.defn.family
        base = self.a_norm2 * unorm**2
        omega = np.empty((m, q, q))
        if fam in (Family.WEIGHTED, Family.GQ):
            BA = [U * A[a] for a in range(q)]
            BW = [b @ self.W for b in BA]
            for a in range(q):
                for b in range(a, q):
                    omega[:, a, b] = omega[:, b, a] = np.einsum("ij,ij->i", BW[a], BA[b])
            return omega, base * self.w_norm
        if fam is Family.EICKER:
            n = self.n
            gam = np.empty((m, n))
            for j in range(n):
                gam[:, j] = np.einsum("ij,ij->i", U[:, j:], U[:, : n - j]) / n
            return (gam @ self.H).reshape(m, q, q), 2.0 * base
        du2 = self.d * U**2
        for a in range(q):
            for b in range(a, q):
                omega[:, a, b] = omega[:, b, a] = du2 @ self.AA[a, b]
        return omega, base * float(np.max(self.d))

    def _rho(self, U: np.ndarray, unorm: np.ndarray, u_zero: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        num = np.einsum("ij,ij->i", U[:, 1:], U[:, :-1])
        seg = U[:, self.a1 - 1 : self.a2]
        den = np.einsum("ij,ij->i", seg, seg)
        n0 = u_zero | (den <= self.zero * unorm**2) | (den == 0.0)
        rho = np.where(n0, 0.0, num / np.where(n0, 1.0, den))
        return rho, n0

    def _ols_ar1(self, U, unorm, u_zero, codes) -> np.ndarray:
        m, n, q = U.shape[0], self.n, self.q
        rho, n0 = self._rho(U, unorm, u_zero)
        powers = rho[:, None] ** np.arange(n)
        middle = (powers @ self.H).reshape(m, q, q)
        bound = 1.0 + 2.0 * (np.abs(rho)[:, None] ** np.arange(1, n)).sum(axis=1)
        finite = np.all(np.isfinite(middle.reshape(m, -1)), axis=1)
        safe = np.where((n0 | ~finite)[:, None, None], 1.0, middle)
        star = ~n0 & (~finite | (_min_abs_eig(safe) <= self.zero * self.a_norm2 * bound))
        sigma2 = unorm**2 / (n - self.k)
        codes[n0] = ExceptionalSet.N0
        codes[star] = ExceptionalSet.N0_STAR
        return sigma2[:, None, None] * middle

    def _fgls(self, Y, U, unorm, u_zero, codes) -> tuple[np.ndarray, np.ndarray]:
        m, n, k, q = Y.shape[0], self.n, self.k, self.q
        R, X = self.restriction.R, self.model.X
        b, n0 = self._rho(U, unorm, u_zero)
        n1 = ~n0 & (np.abs(np.abs(b) - 1.0) <= self.zero)
        # park exceptional rows at b = 0 so the algebra below stays finite
        b = np.where(n0 | n1, 0.0, b)
        b2 = b**2
        M = self.G0[None] + b2[:, None, None] * self.G1[None] - b[:, None, None] * self.G2[None]
        n2 = ~(n0 | n1) & (_rel_min_sv(M) <= self.model.tol.zero(k))
        c = Y @ X + b2[:, None] * (Y[:, 1:-1] @ X[1:-1]) - b[:, None] * (Y[:, :-1] @ X[1:] + Y[:, 1:] @ X[:-1])
        Msafe = np.where(n2[:, None, None], np.eye(k), M)
        beta = np.linalg.solve(Msafe, c[..., None])[..., 0]
        E = Y - beta @ X.T
        den = 1.0 - b2
        ee = np.einsum("ij,ij->i", E, E)
        cross = np.einsum("ij,ij->i", E[:, 1:], E[:, :-1])
        quad = (ee + b2 * np.einsum("ij,ij->i", E[:, 1:-1], E[:, 1:-1]) - 2.0 * b * cross) / den
        sigma2 = quad / (n - k)
        MinvRt = np.linalg.solve(Msafe, np.broadcast_to(R.T, (m, k, q)))
        middle = den[:, None, None] * (R[None] @ MinvRt)
        middle = 0.5 * (middle + np.swapaxes(middle, -1, -2))
        # (1+|b|)^2 / |1-b^2| bounds the spectral norm of the tridiagonal inverse
        linv_norm = (1.0 + np.abs(b)) ** 2 / np.abs(den)
        rel = _rel_min_sv(middle) if q > 1 else (np.abs(middle[:, 0, 0]) > 0).astype(float)
        star = ~(n0 | n1 | n2) & ((np.abs(quad) <= self.zero * ee * linv_norm) | (rel <= self.zero))
        codes[n2] = ExceptionalSet.N2
        codes[star] = ExceptionalSet.N2_STAR
        codes[n0] = ExceptionalSet.N0
        codes[n1] = ExceptionalSet.N1
        return beta @ R.T - self.r, sigma2[:, None, None] * middle


def prepare(defn: TestDefinition, model: LinearModel, restriction: Restriction) -> PreparedStatistic:
    """Precompute design quantities for repeated evaluation of ``defn``."""
    return PreparedStatistic(defn, model, restriction)
