"""Simulation of rejection probabilities and critical-value calibration.

All routines draw ``y = mu + sigma Sigma^{1/2} G`` with ``G`` from the
counter-based streams of :mod:`robustsize.streams`, so a given
``(seed, reps)`` pair reproduces bit-identical results whatever the
chunk grouping or thread count. Curves over a parameter grid reuse the
same normals at every grid point.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import stats as sps

from .covariance import ar1_matrix
from .diagnostics import Verdict, audit
from .model import LinearModel, Restriction, null_representative, restricted_ols
from .statistics import TestDefinition, prepare
from .streams import (
    STREAM_CERTIFY,
    STREAM_GAUSSIAN,
    STREAM_RADIAL,
    STREAM_SPHERE,
    McConfig,
    map_chunks,
    normal_block,
    uniform_block,
)

DEFAULT_RHO_GRID = tuple(
    sorted({0.0} | {s * a for a in (0.999, 0.99, 0.95, 0.9, 0.75, 0.5, 0.25) for s in (1.0, -1.0)})
)


class AuditRefusalError(RuntimeError):
    """Calibration refused because the audit does not certify a positive case."""

    def __init__(self, verdict: Verdict, message: str):
        super().__init__(message)
        self.verdict = verdict


class CalibrationError(RuntimeError):
    """Bisection failed to converge; ``bracket`` holds the last interval."""

    def __init__(self, message: str, bracket: tuple[float, float]):
        super().__init__(message)
        self.bracket = bracket


@dataclass(frozen=True)
class RejectionEstimate:
    """Monte Carlo rejection frequency with its binomial standard error."""

    p: float
    se: float
    reps: int
    seed: int

    @classmethod
    def from_count(cls, hits: int, reps: int, seed: int) -> "RejectionEstimate":
        p = hits / reps
        return cls(p=p, se=float(np.sqrt(p * (1.0 - p) / reps)), reps=reps, seed=seed)

    def as_dict(self) -> dict:
        return {"p": self.p, "se": self.se, "reps": self.reps, "seed": self.seed}


def pooled_se(a: RejectionEstimate, b: RejectionEstimate) -> float:
    """Standard error of ``a.p - b.p`` under the pooled proportion."""
    pbar = (a.p * a.reps + b.p * b.reps) / (a.reps + b.reps)
    return float(np.sqrt(pbar * (1.0 - pbar) * (1.0 / a.reps + 1.0 / b.reps)))


class GaussianSampler:
    """Draws ``mean + scale @ G`` with ``scale scale' = sigma2 Sigma``.

    The scale is the symmetric square root from an eigendecomposition.
    Eigenvalues in ``[-1e-10 * max, 0)`` are clamped to zero with a warning.

    Raises
    ------
    ValueError
        If ``Sigma`` is not symmetric or has a clearly negative eigenvalue.
    """

    def __init__(self, mean: np.ndarray, sigma2: float, Sigma: np.ndarray):
        Sigma = np.asarray(Sigma, dtype=float)
        mean = np.asarray(mean, dtype=float)
        n = mean.size
        if Sigma.shape != (n, n):
            raise ValueError(f"Sigma must be {n} x {n}")
        if not np.allclose(Sigma, Sigma.T, rtol=0, atol=1e-12 * max(1.0, np.abs(Sigma).max())):
            raise ValueError("Sigma must be symmetric")
        if not sigma2 > 0:
            raise ValueError("sigma2 must be positive")
        ev, vec = np.linalg.eigh(0.5 * (Sigma + Sigma.T))
        floor = -1e-10 * max(abs(ev).max(), 1e-300)
        if ev[0] < floor:
            raise ValueError("Sigma is not positive semidefinite")
        if ev[0] < 0:
            warnings.warn("clamping slightly negative eigenvalues of Sigma to zero", RuntimeWarning)
        self.mean = mean
        self.scale = (vec * np.sqrt(sigma2 * np.clip(ev, 0.0, None))) @ vec.T
        self.n = n

    def transform(self, G: np.ndarray) -> np.ndarray:
        return self.mean + G @ self.scale.T


def _check_pd(Sigma: np.ndarray) -> None:
    try:
        np.linalg.cholesky(Sigma)
    except np.linalg.LinAlgError as exc:
        raise ValueError("Sigma must be positive definite") from exc


def simulate_statistic(
    defn: TestDefinition,
    model: LinearModel,
    restriction: Restriction,
    sampler: GaussianSampler,
    mc: McConfig,
    stream: int = STREAM_GAUSSIAN,
) -> np.ndarray:
    """Statistic values for ``mc.reps`` draws (zero on exceptional sets)."""
    stat = prepare(defn, model, restriction)

    def run(start: int, count: int) -> np.ndarray:
        G = normal_block(mc.seed, stream, start, count, sampler.n)
        return stat(sampler.transform(G))[0]

    return np.concatenate(map_chunks(run, mc.reps, mc.chunk))


def rejection_probability(
    defn: TestDefinition,
    model: LinearModel,
    restriction: Restriction,
    mu: np.ndarray,
    sigma2: float,
    Sigma: np.ndarray,
    mc: McConfig,
) -> RejectionEstimate:
    """Estimate ``Pr(T(mu + sigma Sigma^{1/2} G) >= C)``."""
    _check_pd(np.asarray(Sigma, dtype=float))
    values = simulate_statistic(defn, model, restriction, GaussianSampler(mu, sigma2, Sigma), mc)
    return RejectionEstimate.from_count(int(np.sum(values >= defn.critical_value)), mc.reps, mc.seed)


def size_curve_ar1(
    defn: TestDefinition,
    model: LinearModel,
    restriction: Restriction,
    rho_grid=None,
    mc: McConfig = McConfig(),
) -> list[tuple[float, RejectionEstimate]]:
    """Null rejection probability at ``Lambda(rho)`` for each grid point.

    The null mean is the minimum-norm null representative and ``sigma = 1``;
    both are without loss of generality for invariant tests.
    """
    grid = DEFAULT_RHO_GRID if rho_grid is None else tuple(float(r) for r in rho_grid)
    if any(not -1.0 < r < 1.0 for r in grid):
        raise ValueError("rho grid must lie inside (-1, 1)")
    mu0 = null_representative(model, restriction).mu0
    out = []
    for rho in grid:
        out.append((rho, rejection_probability(defn, model, restriction, mu0, 1.0, ar1_matrix(model.n, rho), mc)))
    return out


@dataclass(frozen=True)
class CalibrationResult:
    """Calibrated critical value and its certification run."""

    c_delta: float
    delta: float
    calibration_sup: float
    argsup_rho: float
    certification: RejectionEstimate
    certified: bool
    iterations: int

    def as_dict(self) -> dict:
        return {
            "C_delta": self.c_delta,
            "delta": self.delta,
            "calibration_sup_size": self.calibration_sup,
            "argsup_rho": self.argsup_rho,
            "certification": self.certification.as_dict(),
            "certified": self.certified,
            "iterations": self.iterations,
        }


def calibrate_critical(
    defn: TestDefinition,
    model: LinearModel,
    restriction: Restriction,
    delta: float,
    rho_grid=None,
    mc: McConfig = McConfig(),
    tol_c: float = 1e-4,
    certify_reps: int = 1_000_000,
    c_lo: float = 1e-8,
    max_iter: int = 200,
) -> CalibrationResult:
    """Smallest critical value whose simulated sup-size over the AR(1) grid is at most ``delta``.

    The statistic is simulated once per grid point and every candidate
    ``C`` is compared against the same stored draws, so the estimated
    sup-size is exactly nonincreasing in ``C``. The result is certified
    on a fresh stream with ``certify_reps`` draws at the grid point that
    attains the supremum; ``certified`` is ``p <= delta + 2 se``.

    Raises
    ------
    AuditRefusalError
        If the audit verdict is not ``PositiveCase``: size is then one for
        every ``C``.
    CalibrationError
        If no finite ``C`` reaches ``delta`` within ``max_iter`` doublings,
        or the bisection does not close.
    """
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must lie in (0, 1)")
    report = audit(model, restriction, defn)
    if report.verdict is not Verdict.POSITIVE_CASE:
        raise AuditRefusalError(
            report.verdict,
            f"audit verdict is {report.verdict.value} ({report.theorem}); the size of this test is one or "
            "its conditions are not certified, so no critical value controls size. Consider --adjust.",
        )
    grid = DEFAULT_RHO_GRID if rho_grid is None else tuple(float(r) for r in rho_grid)
    mu0 = null_representative(model, restriction).mu0
    samples = [
        np.sort(simulate_statistic(defn, model, restriction, GaussianSampler(mu0, 1.0, ar1_matrix(model.n, rho)), mc))
        for rho in grid
    ]
    reps = mc.reps

    def sizes(C: float) -> np.ndarray:
        return np.array([(reps - np.searchsorted(s, C, side="left")) / reps for s in samples])

    iterations = 0
    lo, hi = c_lo, max(1.0, c_lo)
    if sizes(lo).max() <= delta:
        hi = lo
    else:
        while sizes(hi).max() > delta:
            lo, hi = hi, 2.0 * hi
            iterations += 1
            if iterations > max_iter:
                raise CalibrationError("sup-size stays above delta for every bracketed C", (lo, hi))
        while hi - lo > tol_c * max(1.0, hi):
            mid = 0.5 * (lo + hi)
            if sizes(mid).max() <= delta:
                hi = mid
            else:
                lo = mid
            iterations += 1
            if iterations > max_iter:
                raise CalibrationError("bisection did not converge", (lo, hi))
    at_hi = sizes(hi)
    arg = int(np.argmax(at_hi))
    cert_cfg = McConfig(reps=certify_reps, seed=mc.seed, chunk=mc.chunk)
    sampler = GaussianSampler(mu0, 1.0, ar1_matrix(model.n, grid[arg]))
    values = simulate_statistic(defn.with_critical_value(hi), model, restriction, sampler, cert_cfg, STREAM_CERTIFY)
    cert = RejectionEstimate.from_count(int(np.sum(values >= hi)), certify_reps, mc.seed)
    return CalibrationResult(
        c_delta=float(hi), delta=delta, calibration_sup=float(at_hi[arg]), argsup_rho=grid[arg],
        certification=cert, certified=bool(cert.p <= delta + 2.0 * cert.se), iterations=iterations,
    )


@dataclass(frozen=True)
class PowerPoint:
    distance: float
    estimate: RejectionEstimate


def distance_to_null(model: LinearModel, restriction: Restriction, mu: np.ndarray) -> float:
    """Euclidean distance from ``mu`` to the affine null mean space."""
    return float(np.linalg.norm(restricted_ols(model, restriction, mu)[1]))


def power_probe(
    defn: TestDefinition,
    model: LinearModel,
    restriction: Restriction,
    mu1_grid,
    sigma2: float,
    Sigma: np.ndarray,
    mc: McConfig,
) -> list[PowerPoint]:
    """Rejection frequencies at alternative means, with their scaled distance to the null."""
    out = []
    for mu1 in mu1_grid:
        mu1 = np.asarray(mu1, dtype=float)
        if not model.in_span(mu1):
            raise ValueError("alternative means must lie in span(X)")
        d = distance_to_null(model, restriction, mu1) / np.sqrt(sigma2)
        if d == 0.0:
            raise ValueError("alternative mean lies in the null mean space")
        out.append(PowerPoint(d, rejection_probability(defn, model, restriction, mu1, sigma2, Sigma, mc)))
    return out


RADIAL_LAWS = ("gaussian", "chiMixture", "uniformSphereScale")


@dataclass(frozen=True)
class EllipticalResult:
    p_gaussian: RejectionEstimate
    p_elliptical: RejectionEstimate
    z_score: float

    def as_dict(self) -> dict:
        return {
            "gaussian": self.p_gaussian.as_dict(),
            "elliptical": self.p_elliptical.as_dict(),
            "z": self.z_score,
        }


def _radius(law: str, u: np.ndarray, n: int) -> np.ndarray:
    if law == "uniformSphereScale":
        return np.ones(u.shape[0])
    if law == "chiMixture":
        # chi_n radius rescaled by 1/2 or 2 with equal probability
        scale = np.where(u[:, 1] < 0.5, 0.5, 2.0)
        return scale * sps.chi.ppf(u[:, 0], df=n)
    raise ValueError(f"unknown radial law {law!r}")


def elliptical_null_check(
    defn: TestDefinition,
    model: LinearModel,
    restriction: Restriction,
    Sigma: np.ndarray,
    radial: str,
    mc: McConfig,
) -> EllipticalResult:
    """Compare null rejection under Gaussian and spherically generated elliptical errors.

    The elliptical arm draws ``y = mu0 + varrho Sigma^{1/2} E`` with ``E``
    uniform on the unit sphere. For the ``gaussian`` radial law
    ``varrho E`` is the Gaussian vector itself, so both arms are one
    experiment and the z-score is zero.
    """
    if radial not in RADIAL_LAWS:
        raise ValueError(f"radial law must be one of {RADIAL_LAWS}")
    _check_pd(np.asarray(Sigma, dtype=float))
    mu0 = null_representative(model, restriction).mu0
    sampler = GaussianSampler(mu0, 1.0, Sigma)
    C = defn.critical_value
    gauss = RejectionEstimate.from_count(
        int(np.sum(simulate_statistic(defn, model, restriction, sampler, mc) >= C)), mc.reps, mc.seed
    )
    if radial == "gaussian":
        return EllipticalResult(gauss, gauss, 0.0)
    stat = prepare(defn, model, restriction)
    n = model.n

    def run(start: int, count: int) -> int:
        G = normal_block(mc.seed, STREAM_SPHERE, start, count, n)
        E = G / np.linalg.norm(G, axis=1, keepdims=True)
        rad = _radius(radial, uniform_block(mc.seed, STREAM_RADIAL, start, count, 2), n)
        return int(np.sum(stat(sampler.transform(rad[:, None] * E))[0] >= C))

    ell = RejectionEstimate.from_count(sum(map_chunks(run, mc.reps, mc.chunk)), mc.reps, mc.seed)
    se = pooled_se(gauss, ell)
    z = 0.0 if se == 0.0 else (gauss.p - ell.p) / se
    return EllipticalResult(gauss, ell, float(z))
