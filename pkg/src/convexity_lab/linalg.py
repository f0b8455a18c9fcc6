"""Small dense linear-algebra helpers: spectral norms and symmetric eigensolves."""
import logging

import numpy as np

from .errors import InvalidInputError

log = logging.getLogger(__name__)

POWER_RTOL = 1e-10
POWER_MAXITER = 10_000


def _power_sq(G, v, rtol, maxiter):
    # largest eigenvalue of the PSD Gram matrix G by power iteration,
    # stopping on the eigen-residual rather than on estimate stagnation
    mu = 0.0
    for _ in range(maxiter):
        w = G @ v
        mu = float(v @ w)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0, False
        if np.linalg.norm(w - mu * v) <= rtol * abs(mu):
            return mu, True
        v = w / nw
    return mu, False


def spectral_norm(M, rtol=POWER_RTOL, maxiter=POWER_MAXITER):
    """Operator 2-norm of ``M`` by power iteration on ``M^T M``.

    Starts from the normalized all-ones vector. If that start is deflated
    (lies in the null space) or the iteration stalls, a fixed alternating
    start is tried, and as a last resort the SVD value is returned.
    """
    M = np.asarray(M, dtype=float)
    if M.size == 0 or not np.any(M):
        return 0.0
    G = M.T @ M if M.shape[0] >= M.shape[1] else M @ M.T
    n = G.shape[0]
    starts = [np.ones(n), np.cos(np.arange(n) * 1.618033988749895 + 0.5)]
    for v in starts:
        v = v / np.linalg.norm(v)
        mu, ok = _power_sq(G, v, rtol, maxiter)
        if ok and mu > 0.0:
            return float(np.sqrt(mu))
    log.debug("power iteration did not converge; using SVD for %s matrix", M.shape)
    return float(np.linalg.norm(M, 2))


def check_symmetric(M, tol=1e-8):
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise InvalidInputError(f"expected a square matrix, got shape {M.shape}")
    scale = max(1.0, float(np.max(np.abs(M)))) if M.size else 1.0
    asym = float(np.max(np.abs(M - M.T))) if M.size else 0.0
    if asym > tol * scale:
        raise InvalidInputError(f"matrix not symmetric: max |M - M^T| = {asym:.3e}")
    return M


def min_eigenpair(M, tol=1e-8):
    """Smallest eigenvalue, unit eigenvector and residual ``||Mv - mu v||``."""
    M = check_symmetric(M, tol)
    vals, vecs = np.linalg.eigh(0.5 * (M + M.T))
    v = vecs[:, 0]
    mu = float(vals[0])
    residual = float(np.linalg.norm(M @ v - mu * v))
    return mu, v, residual


def min_eigenvalue(M, tol=1e-8):
    """Smallest eigenvalue of a symmetric matrix (full eigensolve)."""
    mu, _, residual = min_eigenpair(M, tol)
    norm = float(np.linalg.norm(M, 2)) if np.size(M) else 0.0
    if residual > 1e-8 * max(norm, 1e-300):
        log.warning("min eigenvalue residual %.3e exceeds 1e-8 * ||M||", residual)
    return mu
