"""Eigenvalue helpers for small symmetric matrices (eNTK Grams, Hessians)."""
import logging
from typing import Tuple

import numpy as np

from .errors import DimensionError, NumericError

logger = logging.getLogger(__name__)

DENSE_EIGEN_LIMIT = 64
POWER_TOL = 1e-10
POWER_MAX_ITER = 10_000


def _square(matrix: np.ndarray) -> np.ndarray:
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {matrix.shape}")
    return matrix


def symmetrize(matrix: np.ndarray) -> np.ndarray:
    matrix = _square(matrix)
    return 0.5 * (matrix + matrix.T)


def power_iteration(
    matrix: np.ndarray,
    tol: float = POWER_TOL,
    max_iter: int = POWER_MAX_ITER,
) -> Tuple[float, np.ndarray]:
    """
    Dominant eigenpair of a symmetric positive semidefinite matrix.

    Stops when the Rayleigh quotient changes by less than ``tol`` relative to
    max(1, λ). The start vector is fixed so results are reproducible.
    """
    matrix = _square(matrix)
    n = matrix.shape[0]
    v = np.random.Generator(np.random.Philox(0)).standard_normal(n)
    v /= np.linalg.norm(v)

    eigval = 0.0
    for iteration in range(1, max_iter + 1):
        w = matrix @ v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0, v
        new_eigval = float(v @ w)
        v = w / norm
        if abs(new_eigval - eigval) <= tol * max(1.0, abs(new_eigval)):
            logger.debug("Power iteration converged in %d iterations (n=%d)", iteration, n)
            return new_eigval, v
        eigval = new_eigval

    raise NumericError(f"power iteration did not converge after {max_iter} iterations")


def lambda_max(matrix: np.ndarray, dense: bool = False) -> float:
    """
    Largest eigenvalue: dense solve up to 64×64, power iteration beyond.

    Power iteration assumes a PSD matrix; pass ``dense=True`` for indefinite
    ones such as Hessians.
    """
    matrix = _square(matrix)
    if dense or matrix.shape[0] <= DENSE_EIGEN_LIMIT:
        return float(np.linalg.eigvalsh(symmetrize(matrix))[-1])
    eigval, _ = power_iteration(matrix)
    return eigval


def lambda_min(matrix: np.ndarray) -> float:
    return float(np.linalg.eigvalsh(symmetrize(matrix))[0])


def is_psd(matrix: np.ndarray, tol: float = 1e-10) -> bool:
    """Symmetric to 1e-12 and no eigenvalue below −tol."""
    matrix = _square(matrix)
    scale = max(1.0, float(np.abs(matrix).max(initial=0.0)))
    if not np.allclose(matrix, matrix.T, rtol=0.0, atol=1e-12 * scale):
        return False
    return lambda_min(matrix) >= -tol


def trace_bounds_slack(matrix: np.ndarray) -> Tuple[float, float, float]:
    """
    Slack in max diag ≤ λmax ≤ trace ≤ k·λmax for a PSD matrix.

    All three entries are non-negative up to rounding when the bounds hold.
    """
    matrix = _square(matrix)
    top = lambda_max(matrix)
    trace = float(np.trace(matrix))
    return (
        top - float(np.diag(matrix).max()),
        trace - top,
        matrix.shape[0] * top - trace,
    )


def weyl_slack(a: np.ndarray, b: np.ndarray) -> Tuple[float, float]:
    """
    Slack in λmax(A+B) ≤ λmax(A)+λmax(B) and λmin(A+B) ≥ λmin(A)+λmin(B).
    """
    total = _square(a) + _square(b)
    upper = lambda_max(a) + lambda_max(b) - lambda_max(total)
    lower = lambda_min(total) - lambda_min(a) - lambda_min(b)
    return upper, lower
