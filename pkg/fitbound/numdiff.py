from typing import Callable

import numpy as np


def gradient(f: Callable[[np.ndarray], np.ndarray], x: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """
    Central-difference derivative of ``f`` at ``x``.

    ``f`` may return a scalar or an array of any shape; the result has shape
    ``f(x).shape + (x.size,)``, so a vector-valued ``f`` yields its Jacobian.
    """
    x = np.array(x, dtype=np.float64)
    columns = []
    for ii in range(x.size):
        x[ii] += step
        f_hi = np.asarray(f(x), dtype=np.float64)
        x[ii] -= 2.0 * step
        f_lo = np.asarray(f(x), dtype=np.float64)
        x[ii] += step
        columns.append((f_hi - f_lo) / (2.0 * step))
    return np.stack(columns, axis=-1)


def max_relative_error(exact: np.ndarray, approx: np.ndarray, floor: float = 1e-2) -> float:
    """Largest entrywise |exact − approx| / max(|exact|, floor)."""
    exact = np.asarray(exact, dtype=np.float64)
    approx = np.asarray(approx, dtype=np.float64)
    scale = np.maximum(np.abs(exact), floor)
    return float(np.max(np.abs(exact - approx) / scale, initial=0.0))
