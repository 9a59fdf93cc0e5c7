"""Covariance models and their singular limits.

AR(1) correlation matrices with a closed-form tridiagonal inverse, AR(2)
correlation matrices with complex roots, heteroskedastic diagonals, the
harmonic bases ``E(nu)``, and the normalized limit matrices that describe
how AR(1) matrices approach the rank-one limits ``e+ e+'`` and ``e- e-'``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np
from scipy import linalg as sla

EPS = float(np.finfo(float).eps)


class SingularParameterError(ValueError):
    """Raised when a covariance parameter sits on a singular boundary."""


class DegenerateProbeError(ValueError):
    """Raised when the trace normalization of a probe vanishes."""


def e_plus(n: int) -> np.ndarray:
    """The vector of ones."""
    return np.ones(n)


def e_minus(n: int) -> np.ndarray:
    """The alternating vector ``(-1, 1, -1, ...)`` of length n."""
    return np.where(np.arange(1, n + 1) % 2 == 0, 1.0, -1.0)


def unit_vector(n: int, i: int) -> np.ndarray:
    """The i-th standard basis vector (0-based index)."""
    v = np.zeros(n)
    v[i] = 1.0
    return v


@dataclass(frozen=True)
class Ar1Param:
    """Stationary AR(1) coefficient, ``-1 < rho < 1``."""

    rho: float

    def __post_init__(self):
        if not -1.0 < self.rho < 1.0:
            raise ValueError(f"AR(1) coefficient must lie in (-1, 1), got {self.rho}")


@dataclass(frozen=True)
class Ar2Param:
    """AR(2) with complex roots ``r exp(+-i nu)``."""

    r: float
    nu: float

    def __post_init__(self):
        if not 0.0 < self.r < 1.0:
            raise ValueError(f"root modulus must lie in (0, 1), got {self.r}")
        if not 0.0 < self.nu < np.pi:
            raise ValueError(f"nu must lie in (0, pi), got {self.nu}")

    @property
    def coefficients(self) -> tuple[float, float]:
        return 2.0 * self.r * np.cos(self.nu), -self.r**2


@dataclass(frozen=True)
class HetWeights:
    """Positive variances summing to one."""

    tau2: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.tau2, dtype=float)
        if t.ndim != 1 or t.size == 0:
            raise ValueError("tau2 must be a non-empty vector")
        if np.any(t <= 0):
            raise ValueError("variances must be strictly positive")
        if abs(t.sum() - 1.0) > 1e-8:
            raise ValueError(f"variances must sum to one, got {t.sum()}")
        object.__setattr__(self, "tau2", t)


@dataclass(frozen=True)
class HarmonicSpace:
    """Harmonic basis at angular frequency ``nu``."""

    nu: float
    basis: np.ndarray

    @property
    def dim(self) -> int:
        return self.basis.shape[1]


def ar1_is_singular(rho: float, tol: float = 1e-12) -> bool:
    """Whether ``Lambda(rho)`` is singular, i.e. ``|rho| = 1`` up to ``tol``."""
    return abs(abs(rho) - 1.0) <= tol


def ar1_matrix(n: int, rho: float) -> np.ndarray:
    """Toeplitz matrix with entries ``rho**|i-j|``.

    Any real ``rho`` is accepted: ``|rho| > 1`` arises when a plug-in
    estimate is fed back in, and ``|rho| = 1`` gives the rank-one limits
    (see :func:`ar1_is_singular`).
    """
    return sla.toeplitz(float(rho) ** np.arange(n))


def ar1_inverse(n: int, rho: float) -> np.ndarray:
    """Closed-form tridiagonal inverse of ``ar1_matrix(n, rho)``.

    Diagonal ``(1, 1 + rho^2, ..., 1 + rho^2, 1) / (1 - rho^2)`` and
    off-diagonal ``-rho / (1 - rho^2)``. Valid for every ``|rho| != 1``.

    Raises
    ------
    SingularParameterError
        If ``|rho| = 1``.
    """
    if ar1_is_singular(rho):
        raise SingularParameterError(f"Lambda(rho) is singular at rho={rho}")
    if n == 1:
        return np.ones((1, 1))
    b = float(rho)
    den = 1.0 - b * b
    diag = np.full(n, 1.0 + b * b)
    diag[0] = diag[-1] = 1.0
    out = np.diag(diag / den)
    off = np.full(n - 1, -b / den)
    out += np.diag(off, 1) + np.diag(off, -1)
    return out


def ar2_matrix(n: int, param: Ar2Param) -> np.ndarray:
    """Correlation matrix of the stationary AR(2) with roots ``r exp(+-i nu)``.

    Autocorrelations follow from the Yule-Walker recursion
    ``c1 = phi1 / (1 - phi2)`` and ``c_j = phi1 c_{j-1} + phi2 c_{j-2}``.
    """
    phi1, phi2 = param.coefficients
    c = np.empty(n)
    c[0] = 1.0
    if n > 1:
        c[1] = phi1 / (1.0 - phi2)
    for j in range(2, n):
        c[j] = phi1 * c[j - 1] + phi2 * c[j - 2]
    return sla.toeplitz(c)


def harmonic_basis(n: int, nu: float) -> HarmonicSpace:
    """Rows ``(cos(t nu), sin(t nu))`` for t = 1..n.

    At ``nu = 0`` and ``nu = pi`` the sine column vanishes and the basis
    collapses to the single column ``e+`` or ``e-``.
    """
    if not 0.0 <= nu <= np.pi:
        raise ValueError(f"nu must lie in [0, pi], got {nu}")
    if nu == 0.0:
        return HarmonicSpace(nu=0.0, basis=e_plus(n)[:, None])
    if nu == np.pi:
        return HarmonicSpace(nu=float(np.pi), basis=e_minus(n)[:, None])
    t = np.arange(1, n + 1)
    return HarmonicSpace(nu=float(nu), basis=np.column_stack([np.cos(t * nu), np.sin(t * nu)]))


def het_matrix(w: HetWeights) -> np.ndarray:
    """Diagonal covariance ``diag(tau2)``."""
    return np.diag(w.tau2)


def ar1_limit_d(n: int, endpoint: int) -> np.ndarray:
    """Normalized limit of the projected AR(1) matrix as ``rho -> endpoint``.

    With ``S = sum_{i,j} |i-j|`` the unprojected matrix has entries
    ``-n |i-j| / S`` at ``+1`` and ``n (-1)^{|i-j|+1} |i-j| / S`` at ``-1``;
    it is then pre- and post-multiplied by the projector annihilating
    ``e+`` or ``e-`` respectively. The result has unit trace.
    """
    if n < 2:
        raise ValueError("n must be at least 2")
    if endpoint not in (1, -1):
        raise ValueError("endpoint must be +1 or -1")
    lag = np.abs(np.subtract.outer(np.arange(n), np.arange(n))).astype(float)
    S = lag.sum()
    if endpoint == 1:
        M = -n * lag / S
        z = e_plus(n)
    else:
        M = n * np.where(lag % 2 == 0, -1.0, 1.0) * lag / S
        z = e_minus(n)
    Pi = np.eye(n) - np.outer(z, z) / n
    D = Pi @ M @ Pi
    return 0.5 * (D + D.T)


@dataclass(frozen=True)
class ProbeStep:
    """One step of a singular-approach probe."""

    rho: float
    s: float
    D: np.ndarray
    cross: np.ndarray


def singular_approach_probe(
    sigma_at: Callable[[float], np.ndarray], z_basis: np.ndarray, rho_seq: Iterable[float]
) -> list[ProbeStep]:
    """Trace-normalized projections of ``sigma_at(rho)`` along a sequence.

    For each ``rho`` returns ``s = trace(Pi Sigma Pi)`` where ``Pi`` projects
    onto the orthogonal complement of span(z_basis), ``D = Pi Sigma Pi / s``
    and the cross term ``Pi Sigma P_Z / sqrt(s)``.

    Raises
    ------
    DegenerateProbeError
        If ``s`` vanishes.
    """
    Z = np.asarray(z_basis, dtype=float)
    if Z.ndim == 1:
        Z = Z[:, None]
    n, l = Z.shape
    if l >= n or np.linalg.matrix_rank(Z) != l:
        raise ValueError("z_basis must have full column rank l < n")
    Qz, _ = np.linalg.qr(Z)
    Pz = Qz @ Qz.T
    Pi = np.eye(n) - Pz
    steps = []
    for rho in rho_seq:
        Sig = np.asarray(sigma_at(rho), dtype=float)
        proj = Pi @ Sig @ Pi
        s = float(np.trace(proj))
        if s <= EPS * max(1.0, float(np.trace(Sig))):
            raise DegenerateProbeError(f"trace normalization vanishes at rho={rho}")
        steps.append(ProbeStep(rho=float(rho), s=s, D=proj / s, cross=Pi @ Sig @ Pz / np.sqrt(s)))
    return steps
