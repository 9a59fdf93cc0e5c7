"""Brute-force reference implementations used to derive frozen test values.

Nothing here shares code with the package: loops replace vectorized
algebra, dense inverses replace closed forms and spectral integration
replaces recursions. Each function is slow but easy to check by eye.
"""

from __future__ import annotations

import numpy as np
from scipy import integrate


def ar1(n: int, rho: float) -> np.ndarray:
    out = np.empty((n, n))
    for i in range(n):
        for j in range(n):
            out[i, j] = rho ** abs(i - j)
    return out


def ols(X: np.ndarray, y: np.ndarray) -> np.ndarray:
    return np.linalg.lstsq(X, y, rcond=None)[0]


def resid(X: np.ndarray, y: np.ndarray) -> np.ndarray:
    return y - X @ ols(X, y)


def bartlett_weights(n: int, M: float) -> np.ndarray:
    return np.array([max(0.0, 1.0 - j / M) for j in range(n)])


def psi_loop(X: np.ndarray, y: np.ndarray, w: np.ndarray) -> np.ndarray:
    """``n^{-1} sum_{t,s} w(|t-s|) v_t v_s'`` by a double loop."""
    n, k = X.shape
    u = resid(X, y)
    out = np.zeros((k, k))
    for t in range(n):
        for s in range(n):
            out += w[abs(t - s)] * u[t] * u[s] * np.outer(X[t], X[s])
    return out / n


def omega_loop(X: np.ndarray, R: np.ndarray, y: np.ndarray, w: np.ndarray) -> np.ndarray:
    n = X.shape[0]
    G = np.linalg.inv(X.T @ X)
    return n * R @ G @ psi_loop(X, y, w) @ G @ R.T


def wald(X: np.ndarray, R: np.ndarray, r: np.ndarray, y: np.ndarray, omega: np.ndarray) -> float:
    d = R @ ols(X, y) - r
    return float(d @ np.linalg.inv(omega) @ d)


def eicker_psi_loop(X: np.ndarray, y: np.ndarray) -> np.ndarray:
    n, k = X.shape
    u = resid(X, y)
    gam = [sum(u[l] * u[l - j] for l in range(j, n)) / n for j in range(n)]
    out = np.zeros((k, k))
    for t in range(n):
        for s in range(n):
            out += gam[abs(t - s)] * np.outer(X[t], X[s])
    return out / n


def het_omega_loop(X: np.ndarray, R: np.ndarray, y: np.ndarray, variant: str) -> np.ndarray:
    n, k = X.shape
    G = np.linalg.inv(X.T @ X)
    u = resid(X, y)
    h = np.array([X[i] @ G @ X[i] for i in range(n)])
    d = {"HC0": np.ones(n), "HC1": np.full(n, n / (n - k)), "HC2": 1 / (1 - h), "HC3": 1 / (1 - h) ** 2}[variant]
    meat = sum(d[i] * u[i] ** 2 * np.outer(X[i], X[i]) for i in range(n))
    return R @ G @ meat @ G @ R.T


def rho_yw(u: np.ndarray, a1: int = 1, a2: int | None = None) -> float:
    n = len(u)
    a2 = n if a2 is None else a2
    num = sum(u[t] * u[t - 1] for t in range(1, n))
    den = sum(u[t] ** 2 for t in range(a1 - 1, a2))
    return num / den


def fgls_stat(X: np.ndarray, R: np.ndarray, r: np.ndarray, y: np.ndarray, a1: int = 1, a2: int | None = None) -> float:
    n, k = X.shape
    rho = rho_yw(resid(X, y), a1, a2)
    Li = np.linalg.inv(ar1(n, rho))
    V = np.linalg.inv(X.T @ Li @ X)
    beta = V @ X.T @ Li @ y
    e = y - X @ beta
    s2 = e @ Li @ e / (n - k)
    d = R @ beta - r
    return float(d @ np.linalg.inv(s2 * R @ V @ R.T) @ d)


def ols_ar1_stat(X: np.ndarray, R: np.ndarray, r: np.ndarray, y: np.ndarray) -> float:
    n, k = X.shape
    u = resid(X, y)
    rho = rho_yw(u)
    G = np.linalg.inv(X.T @ X)
    om = (u @ u) / (n - k) * R @ G @ X.T @ ar1(n, rho) @ X @ G @ R.T
    return wald(X, R, r, y, om)


def f_stat(X: np.ndarray, R: np.ndarray, r: np.ndarray, y: np.ndarray) -> float:
    n, k = X.shape
    q = R.shape[0]
    u = resid(X, y)
    G = np.linalg.inv(X.T @ X)
    return wald(X, R, r, y, q * (u @ u) / (n - k) * R @ G @ R.T)


def ar2_autocorrelation(n: int, r: float, nu: float) -> np.ndarray:
    """Autocorrelations of the AR(2) with roots ``r exp(+-i nu)`` by integrating its spectral density."""
    phi1, phi2 = 2 * r * np.cos(nu), -r * r

    def f(lam):
        z = np.exp(-1j * lam)
        return 1.0 / abs(1 - phi1 * z - phi2 * z * z) ** 2

    peaks = [nu]
    gam = [integrate.quad(lambda lam, j=j: np.cos(j * lam) * f(lam), 0, np.pi, points=peaks, limit=400)[0]
           for j in range(n)]
    gam = np.array(gam)
    return gam / gam[0]
