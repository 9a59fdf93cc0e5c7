"""Linear regression substrate.

Validated design and restriction containers, OLS and restricted OLS,
span tests, sign normalization and the maximal invariant of the affine
group that leaves the null mean space fixed.

All heavy lifting goes through a thin QR factorization of ``X``; no
explicit matrix inverse is ever formed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg as sla

EPS = float(np.finfo(float).eps)


class SpecificationError(ValueError):
    """Raised when a design or restriction violates its structural invariants."""


@dataclass(frozen=True)
class Tolerances:
    """Numerical tolerances shared by every module.

    Attributes
    ----------
    rank_factor : float
        Multiplier in the rank threshold ``sigma_max * max(shape) * eps * rank_factor``.
        The same multiplier scales the "numerically zero" threshold used to
        detect exceptional sets of the test statistics.
    membership : float
        Relative tolerance for span membership and equality checks used by
        the audits, e.g. ``||(I - P_X) v|| <= membership * ||v||``.
    tie : float
        Relative tolerance for declaring ``T == C``: ``|T - C| <= tie * (1 + C)``.
    """

    rank_factor: float = 64.0
    membership: float = 1e-8
    tie: float = 1e-8

    def zero(self, size: int) -> float:
        """Relative threshold below which a computed quantity counts as zero."""
        return self.rank_factor * max(int(size), 1) * EPS

    def as_dict(self) -> dict[str, float]:
        return {"rank_factor": self.rank_factor, "membership": self.membership, "tie": self.tie}


DEFAULT_TOLERANCES = Tolerances()


def numerical_rank(M: np.ndarray, tol: Tolerances = DEFAULT_TOLERANCES, floor: float = 0.0) -> int:
    """Rank from singular values with threshold ``sigma_max * max(shape) * eps * rank_factor``.

    Parameters
    ----------
    M : ndarray
        Matrix of any shape.
    tol : Tolerances
        Tolerance configuration.
    floor : float, optional
        Absolute lower bound for the threshold. Used when the matrix is known
        to be a noisy version of an exact zero at a given scale.
    """
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.size == 0:
        return 0
    s = np.linalg.svd(M, compute_uv=False)
    if s[0] == 0.0:
        return 0
    thresh = max(s[0] * max(M.shape) * EPS * tol.rank_factor, floor)
    return int(np.sum(s > thresh))


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


class LinearModel:
    """Design matrix ``X`` (n x k) with validated full column rank.

    Parameters
    ----------
    X : array_like
        Design matrix; a 1-d input is treated as a single column.
    tol : Tolerances, optional
        Tolerance configuration carried along for downstream checks.

    Raises
    ------
    SpecificationError
        If ``X`` is not finite, ``k >= n``, or ``X`` is numerically rank deficient.
    """

    def __init__(self, X: np.ndarray, tol: Tolerances = DEFAULT_TOLERANCES):
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if X.ndim != 2:
            raise SpecificationError("X must be a matrix")
        n, k = X.shape
        if not np.all(np.isfinite(X)):
            raise SpecificationError("X contains non-finite entries")
        if not 1 <= k < n:
            raise SpecificationError(f"need 1 <= k < n, got n={n}, k={k}")
        if numerical_rank(X, tol) != k:
            raise SpecificationError("X does not have full column rank")
        q_fac, r_fac = np.linalg.qr(X)
        self.X = _freeze(X)
        self.n = n
        self.k = k
        self.tol = tol
        self._Q = _freeze(q_fac)
        self._Rf = _freeze(r_fac)
        # (X'X)^{-1} X' = Rf^{-1} Q'
        self._L = _freeze(sla.solve_triangular(r_fac, q_fac.T))

    @property
    def orthonormal_basis(self) -> np.ndarray:
        """Orthonormal basis ``Q`` of span(X) from the thin QR factorization."""
        return self._Q

    @property
    def ols_operator(self) -> np.ndarray:
        """The k x n matrix ``(X'X)^{-1} X'``."""
        return self._L

    def xtx_inv(self, M: np.ndarray) -> np.ndarray:
        """Return ``(X'X)^{-1} M`` via two triangular solves."""
        tmp = sla.solve_triangular(self._Rf, M, trans="T")
        return sla.solve_triangular(self._Rf, tmp)

    def ols(self, y: np.ndarray) -> np.ndarray:
        """OLS coefficients; ``y`` may be an n-vector or an n x m matrix of columns."""
        y = np.asarray(y, dtype=float)
        return sla.solve_triangular(self._Rf, self._Q.T @ y)

    def fitted(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        return self._Q @ (self._Q.T @ y)

    def residuals(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        return y - self.fitted(y)

    def leverages(self) -> np.ndarray:
        """Diagonal of the hat matrix ``X (X'X)^{-1} X'``."""
        return np.sum(self._Q**2, axis=1)

    def in_span(self, v: np.ndarray, tol: float | None = None) -> bool:
        """True iff ``||(I - P_X) v|| <= tol * ||v||``; the zero vector is in the span."""
        tol = self.tol.membership if tol is None else tol
        v = np.asarray(v, dtype=float)
        nv = np.linalg.norm(v)
        if nv == 0.0:
            return True
        return bool(np.linalg.norm(self.residuals(v)) <= tol * nv)


class Restriction:
    """Linear restriction ``R beta = r`` with ``R`` of full row rank q.

    Parameters
    ----------
    R : array_like
        q x k matrix; a 1-d input is a single row.
    r : array_like
        Length-q right-hand side; a scalar is accepted when q = 1.
    """

    def __init__(self, R: np.ndarray, r: np.ndarray | float, tol: Tolerances = DEFAULT_TOLERANCES):
        R = np.asarray(R, dtype=float)
        if R.ndim == 1:
            R = R[None, :]
        r = np.atleast_1d(np.asarray(r, dtype=float)).ravel()
        if R.ndim != 2:
            raise SpecificationError("R must be a matrix")
        q, k = R.shape
        if r.shape != (q,):
            raise SpecificationError(f"r must have length {q}, got {r.shape[0]}")
        if not (np.all(np.isfinite(R)) and np.all(np.isfinite(r))):
            raise SpecificationError("R or r contains non-finite entries")
        if not 1 <= q <= k:
            raise SpecificationError(f"need 1 <= q <= k, got q={q}, k={k}")
        if numerical_rank(R, tol) != q:
            raise SpecificationError("R does not have full row rank")
        self.R = _freeze(R)
        self.r = _freeze(r)
        self.q = q
        self.k = k

    def check_compatible(self, model: LinearModel) -> None:
        if self.k != model.k:
            raise SpecificationError(
                f"dimension mismatch: R has {self.k} columns but X has {model.k}"
            )


@dataclass(frozen=True)
class NullPoint:
    """A point ``mu0 = X beta0`` of the null mean space."""

    beta0: np.ndarray
    mu0: np.ndarray


def ols_estimate(model: LinearModel, y: np.ndarray) -> np.ndarray:
    """Ordinary least squares coefficients ``(X'X)^{-1} X'y``.

    Examples
    --------
    >>> import numpy as np
    >>> float(ols_estimate(LinearModel(np.ones((4, 1))), np.array([1.0, 2, 3, 4]))[0])
    2.5
    """
    return model.ols(y)


def residuals(model: LinearModel, y: np.ndarray) -> np.ndarray:
    """Least-squares residual vector ``y - X beta_hat(y)``."""
    return model.residuals(y)


def restricted_ols(
    model: LinearModel, restriction: Restriction, y: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Restricted least squares under ``R beta = r``.

    Returns
    -------
    beta_rest : ndarray
        ``beta_hat - (X'X)^{-1}R'(R(X'X)^{-1}R')^{-1}(R beta_hat - r)``.
    resid : ndarray
        ``y - X beta_rest``, i.e. ``y`` minus its projection onto the null mean space.
    """
    restriction.check_compatible(model)
    y = np.asarray(y, dtype=float)
    R, r = restriction.R, restriction.r
    beta = model.ols(y)
    xtx_inv_rt = model.xtx_inv(R.T)
    middle = R @ xtx_inv_rt
    beta_rest = beta - xtx_inv_rt @ np.linalg.solve(middle, R @ beta - r)
    return beta_rest, y - model.X @ beta_rest


def null_representative(model: LinearModel, restriction: Restriction) -> NullPoint:
    """Minimum-norm ``beta0 = R'(RR')^{-1} r`` and ``mu0 = X beta0``."""
    restriction.check_compatible(model)
    R, r = restriction.R, restriction.r
    beta0 = np.linalg.lstsq(R, r, rcond=None)[0]
    return NullPoint(beta0=_freeze(beta0), mu0=_freeze(model.X @ beta0))


def sign_normalize(x: np.ndarray) -> np.ndarray:
    """Return ``x`` or ``-x`` so that the first nonzero entry is positive.

    >>> sign_normalize(np.array([0.0, -3.0, 1.0]))
    array([ 0.,  3., -1.])
    """
    x = np.asarray(x, dtype=float)
    nz = np.flatnonzero(x)
    if nz.size == 0:
        return np.zeros_like(x)
    return -x if x[nz[0]] < 0 else x.copy()


def span_membership(model: LinearModel, v: np.ndarray, tol: float | None = None) -> bool:
    """True iff ``v`` lies in span(X) up to the relative tolerance ``tol``."""
    return model.in_span(v, tol)


def maximal_invariant(model: LinearModel, restriction: Restriction, y: np.ndarray) -> np.ndarray:
    """Sign-normalized direction of ``y`` after removing the null mean space.

    The projection ``Pi (y - mu0)`` is the restricted-OLS residual. The
    result is a unit vector, or zero when the projection vanishes at
    machine precision relative to ``||y||``.
    """
    y = np.asarray(y, dtype=float)
    _, resid = restricted_ols(model, restriction, y)
    nr = np.linalg.norm(resid)
    scale = max(np.linalg.norm(y), np.linalg.norm(null_representative(model, restriction).mu0))
    if nr <= model.tol.zero(model.n) * scale or nr == 0.0:
        return np.zeros_like(y)
    return sign_normalize(resid / nr)
