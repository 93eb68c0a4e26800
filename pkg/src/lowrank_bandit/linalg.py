"""Dense linear-algebra kernels: SVD, operator norm, singular-value soft-thresholding.

All matrices are plain 2-D float ndarrays. Every function validates that its
input is finite and rejects NaN/Inf up front, so downstream code never has to.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError

RANK_TOL = 1e-10  # singular values above this count toward numerical rank

_POWER_MAX_ITER = 20_000


def _as_matrix(m, name="matrix") -> np.ndarray:
    a = np.asarray(m, dtype=float)
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise ValueError(f"{name} must be a 2-D array, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite entries")
    return a


@dataclass(frozen=True)
class SvdResult:
    """Thin SVD: u (rows x k), singular_values (k,), v (cols x k), k = min(rows, cols)."""

    u: np.ndarray
    singular_values: np.ndarray
    v: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.u * self.singular_values) @ self.v.T

    def rank(self, tol: float = RANK_TOL) -> int:
        return int(np.sum(self.singular_values > tol))


def svd(m) -> SvdResult:
    """Thin SVD with a deterministic sign convention.

    The largest-magnitude entry of each left singular vector is forced
    non-negative (first index wins ties); the matching right vector is
    flipped along with it, so u . diag(s) . v^T is unchanged.
    """
    a = _as_matrix(m)
    try:
        u, s, vt = np.linalg.svd(a, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise ConvergenceError(f"svd failed to converge: {exc}", residual=float("inf"))
    v = vt.T
    for j in range(s.size):
        i = int(np.argmax(np.abs(u[:, j])))
        if u[i, j] < 0:
            u[:, j] = -u[:, j]
            v[:, j] = -v[:, j]
    return SvdResult(u=u, singular_values=s, v=v)


def singular_values(m) -> np.ndarray:
    a = _as_matrix(m)
    return np.linalg.svd(a, compute_uv=False)


def nuclear_norm(m) -> float:
    return float(singular_values(m).sum())


def numerical_rank(m, tol: float = RANK_TOL) -> int:
    return int(np.sum(singular_values(m) > tol))


def operator_norm(m, tol: float = 1e-9) -> float:
    """Largest singular value via power iteration on the smaller Gram matrix."""
    a = _as_matrix(m)
    if tol <= 0:
        raise ValueError("tol must be positive")
    if not np.any(a):
        return 0.0
    if a.shape[0] < a.shape[1]:
        a = a.T
    gram = a.T @ a  # k x k with k = min(rows, cols)
    k = gram.shape[0]
    # deterministic start; the arange tilt avoids exact orthogonality to the
    # top singular direction for structured inputs
    v = np.ones(k) + 1e-4 * np.arange(k)
    v /= np.linalg.norm(v)
    lam = float(v @ gram @ v)
    inner_tol = tol / 8.0
    for _ in range(_POWER_MAX_ITER):
        w = gram @ v
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        v = w / nw
        lam_new = float(v @ gram @ v)
        if abs(lam_new - lam) <= inner_tol * max(lam_new, np.finfo(float).tiny):
            return float(np.sqrt(lam_new))
        lam = lam_new
    raise ConvergenceError(
        "power iteration did not converge",
        residual=abs(lam_new - lam) / max(lam_new, np.finfo(float).tiny),
    )


def svt(m, tau: float) -> np.ndarray:
    """Singular-value soft-thresholding: prox of tau * nuclear norm at m."""
    if tau < 0:
        raise ValueError("tau must be non-negative")
    r = svd(m)
    shrunk = np.maximum(r.singular_values - tau, 0.0)
    return (r.u * shrunk) @ r.v.T
