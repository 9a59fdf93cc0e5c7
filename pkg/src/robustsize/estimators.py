"""Variance estimators entering the robust test statistics.

Lag-window weights, the weighted-autocovariance long-run variance
estimator and its restriction-level form ``Omega = B W B'``, general
quadratic and Eicker-type estimators, heteroskedasticity-robust sandwich
estimators, the AR(1) coefficient estimator ``rho_hat`` and the FGLS and
OLS-AR(1) covariance objects together with their exceptional sets.

Functions here take a single observation vector ``y``. The vectorized
versions used for simulation live in :mod:`robustsize.statistics` and are
tested against these reference implementations.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg as sla

from .covariance import ar1_inverse, ar1_matrix
from .model import LinearModel, Restriction, numerical_rank

# ---------------------------------------------------------------------------
# lag windows


def bartlett_kernel(x: np.ndarray) -> np.ndarray:
    x = np.abs(np.asarray(x, dtype=float))
    return np.maximum(1.0 - x, 0.0)


def parzen_kernel(x: np.ndarray) -> np.ndarray:
    x = np.abs(np.asarray(x, dtype=float))
    inner = 1.0 - 6.0 * x**2 + 6.0 * x**3
    outer = 2.0 * (1.0 - x) ** 3
    return np.where(x <= 0.5, inner, np.where(x <= 1.0, outer, 0.0))


def quadratic_spectral_kernel(x: np.ndarray) -> np.ndarray:
    x = np.abs(np.asarray(x, dtype=float))
    out = np.ones_like(x)
    nz = x > 0
    a = 6.0 * np.pi * x[nz] / 5.0
    out[nz] = 25.0 / (12.0 * np.pi**2 * x[nz] ** 2) * (np.sin(a) / a - np.cos(a))
    return out


_KERNELS = {
    "bartlett": bartlett_kernel,
    "parzen": parzen_kernel,
    "qs": quadratic_spectral_kernel,
}


@dataclass(frozen=True)
class ToeplitzWeights:
    """Lag weights ``w(0), ..., w(n-1)`` defining the symmetric Toeplitz matrix."""

    w: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.w, dtype=float).ravel()
        if w.size == 0 or w[0] != 1.0:
            raise ValueError("lag weights must start with w(0) = 1")
        object.__setattr__(self, "w", w)

    @property
    def n(self) -> int:
        return self.w.size

    @property
    def matrix(self) -> np.ndarray:
        return sla.toeplitz(self.w)


@dataclass(frozen=True)
class LagWindow:
    """Lag window ``w(j, n) = w0(j / M)`` or an explicit weight sequence.

    Parameters
    ----------
    kind : {"bartlett", "parzen", "qs", "custom"}
    bandwidth : float, optional
        The truncation parameter ``M > 0``; ignored for ``custom``.
    custom : sequence of float, optional
        Weights for lags 0, 1, ...; missing lags are zero.
    """

    kind: str
    bandwidth: float | None = None
    custom: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.kind not in (*_KERNELS, "custom"):
            raise ValueError(f"unknown lag window {self.kind!r}")
        if self.kind == "custom":
            if not self.custom:
                raise ValueError("custom window needs a weight sequence")
            object.__setattr__(self, "custom", tuple(float(c) for c in self.custom))
        elif self.bandwidth is None or not self.bandwidth > 0:
            raise ValueError("bandwidth M must be positive")

    def weights(self, n: int) -> ToeplitzWeights:
        if self.kind == "custom":
            w = np.zeros(n)
            m = min(n, len(self.custom))
            w[:m] = self.custom[:m]
            return ToeplitzWeights(w)
        return ToeplitzWeights(_KERNELS[self.kind](np.arange(n) / self.bandwidth))

    def describe(self) -> dict:
        if self.kind == "custom":
            return {"kind": "custom", "weights": list(self.custom)}
        return {"kind": self.kind, "bandwidth": self.bandwidth}


def lag_window_weights(window: LagWindow, n: int) -> ToeplitzWeights:
    """Weights ``w(j, n)`` for lags ``j = 0..n-1``."""
    return window.weights(n)


class WeightDefiniteness(str, enum.Enum):
    POSITIVE_DEFINITE = "positiveDefinite"
    NONNEGATIVE_ONLY = "nonnegativeOnly"
    INDEFINITE = "indefinite"


def check_weight_pd(weights: ToeplitzWeights, rank_factor: float = 64.0) -> WeightDefiniteness:
    """Classify the Toeplitz weight matrix by its smallest eigenvalue."""
    ev = np.linalg.eigvalsh(weights.matrix)
    thresh = rank_factor * weights.n * np.finfo(float).eps * max(abs(ev).max(), 1.0)
    if ev[0] > thresh:
        return WeightDefiniteness.POSITIVE_DEFINITE
    if ev[0] >= -thresh:
        return WeightDefiniteness.NONNEGATIVE_ONLY
    return WeightDefiniteness.INDEFINITE


def _as_weight_matrix(weights: ToeplitzWeights | np.ndarray, n: int) -> np.ndarray:
    if isinstance(weights, ToeplitzWeights):
        W = weights.matrix
    else:
        W = np.asarray(weights, dtype=float)
        if W.ndim == 1:
            W = sla.toeplitz(W)
    if W.shape != (n, n):
        raise ValueError(f"weight matrix must be {n} x {n}")
    return W


# ---------------------------------------------------------------------------
# B(y) and the rank assumption


def restriction_operator(model: LinearModel, restriction: Restriction) -> np.ndarray:
    """The q x n matrix ``A = R (X'X)^{-1} X'``."""
    restriction.check_compatible(model)
    return restriction.R @ model.ols_operator


def b_matrix(model: LinearModel, restriction: Restriction, y: np.ndarray) -> np.ndarray:
    """``B(y) = R (X'X)^{-1} X' diag(u_hat(y))``."""
    return restriction_operator(model, restriction) * model.residuals(y)[None, :]


def check_r_and_x(
    model: LinearModel, restriction: Restriction, tol: float | None = None
) -> tuple[bool, frozenset[int]]:
    """Rank condition after deleting the columns of standard basis vectors in span(X).

    Returns
    -------
    verdict : bool
        Whether ``R (X'X)^{-1} X'`` keeps rank q once the columns with
        indices in ``indices`` are removed.
    indices : frozenset of int
        Zero-based indices ``i`` with ``e_i`` in span(X).
    """
    n = model.n
    Q = model.orthonormal_basis
    # column norms of I - P measured directly; sqrt(1 - h_ii) would amplify rounding
    dist = np.linalg.norm(np.eye(n) - Q @ Q.T, axis=0)
    tol = model.tol.membership if tol is None else tol
    idx = frozenset(int(i) for i in np.flatnonzero(dist <= tol))
    A = restriction_operator(model, restriction)
    keep = [i for i in range(n) if i not in idx]
    if not keep:
        return False, idx
    sub = A[:, keep]
    floor = model.tol.zero(n) * np.linalg.norm(A)
    return numerical_rank(sub, model.tol, floor=floor) == restriction.q, idx


# ---------------------------------------------------------------------------
# long-run variance estimators


def psi_weighted(model: LinearModel, y: np.ndarray, weights: ToeplitzWeights | np.ndarray) -> np.ndarray:
    """Weighted sum of sample autocovariances of ``v_t = u_t x_t'``.

    Equal to ``n^{-1} sum_{t,s} w(|t-s|) v_t v_s'``.
    """
    V = model.residuals(y)[:, None] * model.X
    W = _as_weight_matrix(weights, model.n)
    psi = V.T @ W @ V / model.n
    return 0.5 * (psi + psi.T)


def _sandwich(model: LinearModel, restriction: Restriction, psi: np.ndarray) -> np.ndarray:
    inner = model.xtx_inv(model.xtx_inv(psi).T)
    out = restriction.R @ inner @ restriction.R.T
    return 0.5 * (out + out.T)


def omega_weighted(
    model: LinearModel, restriction: Restriction, y: np.ndarray, weights: ToeplitzWeights | np.ndarray
) -> np.ndarray:
    """``n R (X'X)^{-1} Psi_w (X'X)^{-1} R'``, which equals ``B W B'``."""
    return model.n * _sandwich(model, restriction, psi_weighted(model, y, weights))


def psi_general_quadratic(model: LinearModel, y: np.ndarray, Wstar: np.ndarray) -> np.ndarray:
    """``n^{-1} sum_{t,s} w*(t,s) v_t v_s'`` for an arbitrary symmetric n x n matrix ``Wstar``."""
    Wstar = np.asarray(Wstar, dtype=float)
    if Wstar.shape != (model.n, model.n) or not np.allclose(Wstar, Wstar.T):
        raise ValueError("Wstar must be a symmetric n x n matrix")
    return psi_weighted(model, y, Wstar)


def omega_general_quadratic(
    model: LinearModel, restriction: Restriction, y: np.ndarray, Wstar: np.ndarray
) -> np.ndarray:
    return model.n * _sandwich(model, restriction, psi_general_quadratic(model, y, Wstar))


def gq_rank_deficient(model: LinearModel, restriction: Restriction, y: np.ndarray, Wstar: np.ndarray) -> bool:
    """Whether ``rank(B(y) W*) < q``, the singularity pattern for general quadratic weights."""
    B = b_matrix(model, restriction, y)
    BW = B @ np.asarray(Wstar, dtype=float)
    floor = model.tol.zero(model.n) * np.linalg.norm(restriction_operator(model, restriction)) * max(
        np.linalg.norm(y), 1e-300
    ) * np.linalg.norm(Wstar, 2)
    return numerical_rank(BW, model.tol, floor=floor) < restriction.q


def sample_autocovariances(u: np.ndarray) -> np.ndarray:
    """``gamma_j = n^{-1} sum_{l>j} u_l u_{l-j}`` for j = 0..n-1."""
    u = np.asarray(u, dtype=float)
    n = u.size
    return np.array([u[j:] @ u[: n - j] for j in range(n)]) / n


def psi_eicker(model: LinearModel, y: np.ndarray) -> np.ndarray:
    """``n^{-1} X' K X`` with ``K`` the Toeplitz matrix of residual autocovariances."""
    K = sla.toeplitz(sample_autocovariances(model.residuals(y)))
    psi = model.X.T @ K @ model.X / model.n
    return 0.5 * (psi + psi.T)


def omega_eicker(model: LinearModel, restriction: Restriction, y: np.ndarray) -> np.ndarray:
    return model.n * _sandwich(model, restriction, psi_eicker(model, y))


# ---------------------------------------------------------------------------
# heteroskedasticity-robust estimators


class HetVariant(str, enum.Enum):
    HC0 = "HC0"
    HC1 = "HC1"
    HC2 = "HC2"
    HC3 = "HC3"


def leverages(model: LinearModel) -> np.ndarray:
    """Diagonal ``h_ii`` of the hat matrix."""
    return model.leverages()


def het_factors(model: LinearModel, variant: HetVariant | str) -> np.ndarray:
    """Multipliers ``d_i``; set to one wherever ``h_ii = 1``."""
    variant = HetVariant(variant)
    n, k = model.n, model.k
    if variant is HetVariant.HC0:
        return np.ones(n)
    if variant is HetVariant.HC1:
        return np.full(n, n / (n - k))
    h = model.leverages()
    one_minus = 1.0 - h
    at_one = np.abs(one_minus) <= model.tol.membership
    safe = np.where(at_one, 1.0, one_minus)
    power = 1.0 if variant is HetVariant.HC2 else 2.0
    return np.where(at_one, 1.0, safe**-power)


def psi_het(model: LinearModel, y: np.ndarray, variant: HetVariant | str = HetVariant.HC0) -> np.ndarray:
    """``(X'X)^{-1} X' diag(d_i u_i^2) X (X'X)^{-1}``."""
    L = model.ols_operator
    u = model.residuals(y)
    psi = (L * (het_factors(model, variant) * u**2)) @ L.T
    return 0.5 * (psi + psi.T)


def omega_het(
    model: LinearModel, restriction: Restriction, y: np.ndarray, variant: HetVariant | str = HetVariant.HC0
) -> np.ndarray:
    out = restriction.R @ psi_het(model, y, variant) @ restriction.R.T
    return 0.5 * (out + out.T)


# ---------------------------------------------------------------------------
# AR(1) plug-in estimators


class ExceptionalSetError(ArithmeticError):
    """Raised when an estimator is undefined at the given point.

    Attributes
    ----------
    set_name : str
        Name of the exceptional set containing the point.
    """

    def __init__(self, set_name: str, message: str):
        super().__init__(message)
        self.set_name = set_name


@dataclass(frozen=True)
class RhoEstimatorSpec:
    """Summation limits of the AR(1) coefficient estimator.

    ``rho_hat = sum_{t=2}^n u_t u_{t-1} / sum_{t=a1}^{a2} u_t^2`` with
    ``a1 in {1, 2}`` and ``a2 in {n-1, n}``. The upper limit is stored as
    an offset from ``n`` so the estimator choice is independent of sample size.
    """

    a1: int = 1
    a2_offset: int = 0

    def __post_init__(self):
        if self.a1 not in (1, 2):
            raise ValueError("a1 must be 1 or 2")
        if self.a2_offset not in (0, 1):
            raise ValueError("a2 must be n or n-1")

    @classmethod
    def yule_walker(cls) -> "RhoEstimatorSpec":
        return cls(1, 0)

    @property
    def is_yule_walker(self) -> bool:
        return self.a1 == 1 and self.a2_offset == 0

    def a2(self, n: int) -> int:
        return n - self.a2_offset

    def validate(self, n: int, k: int) -> None:
        if k > self.a2(n) - self.a1:
            raise ValueError(f"need k <= a2 - a1, got k={k}, a1={self.a1}, a2={self.a2(n)}")

    def describe(self) -> dict:
        return {"a1": self.a1, "a2": "n" if self.a2_offset == 0 else "n-1"}


def _rho_from_residuals(u: np.ndarray, spec: RhoEstimatorSpec, zero: float) -> float:
    n = u.size
    den = u[spec.a1 - 1 : spec.a2(n)] @ u[spec.a1 - 1 : spec.a2(n)]
    if den <= zero * (u @ u) or den == 0.0:
        raise ExceptionalSetError("N0", "denominator of rho_hat vanishes")
    return float(u[1:] @ u[:-1] / den)


def rho_hat(model: LinearModel, y: np.ndarray, spec: RhoEstimatorSpec = RhoEstimatorSpec()) -> float:
    """AR(1) coefficient estimator from OLS residuals.

    Raises
    ------
    ExceptionalSetError
        With ``set_name="N0"`` when the denominator vanishes, in particular
        whenever ``y`` lies in span(X).
    """
    y = np.asarray(y, dtype=float)
    u = model.residuals(y)
    zero = model.tol.zero(model.n)
    if np.linalg.norm(u) <= zero * np.linalg.norm(y):
        raise ExceptionalSetError("N0", "residual vector vanishes")
    return _rho_from_residuals(u, spec, zero)


@dataclass(frozen=True)
class ExceptionalFlags:
    """Membership of a point in the exceptional sets of the AR(1) plug-in statistics."""

    n0: bool = False
    n1: bool = False
    n2: bool = False
    n2_star: bool = False
    n0_star: bool = False

    def names(self) -> list[str]:
        out = []
        for attr, label in (("n0", "N0"), ("n1", "N1"), ("n2", "N2"), ("n2_star", "N2*"), ("n0_star", "N0*")):
            if getattr(self, attr):
                out.append(label)
        return out


@dataclass(frozen=True)
class FglsResult:
    """FGLS estimate, scale, covariance and exceptional-set flags.

    Entries other than ``flags`` are NaN where undefined.
    """

    beta_tilde: np.ndarray
    sigma2_tilde: float
    omega_tilde: np.ndarray
    rho: float
    flags: ExceptionalFlags = field(default_factory=ExceptionalFlags)


def _smallest_relative_sv(M: np.ndarray) -> float:
    s = np.linalg.svd(np.atleast_2d(M), compute_uv=False)
    return 0.0 if s[0] == 0 else float(s[-1] / s[0])


def fgls_components(
    model: LinearModel, restriction: Restriction, y: np.ndarray, spec: RhoEstimatorSpec = RhoEstimatorSpec()
) -> FglsResult:
    """Feasible GLS quantities under the AR(1) working model ``Lambda(rho_hat)``."""
    restriction.check_compatible(model)
    n, k, q = model.n, model.k, restriction.q
    nan_beta, nan_omega = np.full(k, np.nan), np.full((q, q), np.nan)
    zero = model.tol.zero(n)
    try:
        rho = rho_hat(model, y, spec)
    except ExceptionalSetError:
        flags = ExceptionalFlags(n0=True, n2_star=True)
        return FglsResult(nan_beta, np.nan, nan_omega, np.nan, flags)
    if abs(abs(rho) - 1.0) <= zero:
        flags = ExceptionalFlags(n1=True, n2_star=True)
        return FglsResult(nan_beta, np.nan, nan_omega, rho, flags)
    X = model.X
    Linv = ar1_inverse(n, rho)
    xlx = X.T @ Linv @ X
    if _smallest_relative_sv(xlx) <= model.tol.zero(k):
        flags = ExceptionalFlags(n2=True, n2_star=True)
        return FglsResult(nan_beta, np.nan, nan_omega, rho, flags)
    beta = np.linalg.solve(xlx, X.T @ Linv @ y)
    e = y - X @ beta
    quad = float(e @ Linv @ e)
    sigma2 = quad / (n - k)
    middle = restriction.R @ np.linalg.solve(xlx, restriction.R.T)
    middle = 0.5 * (middle + middle.T)
    # (1+|b|)^2 / |1-b^2| bounds the spectral norm of the tridiagonal inverse
    linv_norm = (1.0 + abs(rho)) ** 2 / abs(1.0 - rho * rho)
    degenerate = abs(quad) <= zero * (e @ e) * linv_norm or _smallest_relative_sv(middle) <= zero
    omega = sigma2 * middle
    return FglsResult(beta, sigma2, omega, rho, ExceptionalFlags(n2_star=bool(degenerate)))


def ols_ar1_omega(
    model: LinearModel, restriction: Restriction, y: np.ndarray, spec: RhoEstimatorSpec = RhoEstimatorSpec()
) -> tuple[np.ndarray, ExceptionalFlags]:
    """``sigma_hat^2 R (X'X)^{-1} X' Lambda(rho_hat) X (X'X)^{-1} R'`` with ``sigma_hat^2 = u'u/(n-k)``."""
    restriction.check_compatible(model)
    n, k, q = model.n, model.k, restriction.q
    try:
        rho = rho_hat(model, y, spec)
    except ExceptionalSetError:
        return np.full((q, q), np.nan), ExceptionalFlags(n0=True, n0_star=True)
    u = model.residuals(y)
    sigma2 = float(u @ u) / (n - k)
    A = restriction_operator(model, restriction)
    Lam = ar1_matrix(n, rho)
    middle = A @ Lam @ A.T
    middle = 0.5 * (middle + middle.T)
    ev = np.linalg.eigvalsh(middle)
    # Gershgorin bound on the spectral norm of Lambda(rho)
    scale = np.linalg.norm(A) ** 2 * (1.0 + 2.0 * np.sum(abs(rho) ** np.arange(1, n)))
    singular = np.min(np.abs(ev)) <= model.tol.zero(n) * scale
    return sigma2 * middle, ExceptionalFlags(n0_star=bool(singular))
