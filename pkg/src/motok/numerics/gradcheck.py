"""Central finite differences for checking recorded gradients."""
from __future__ import annotations

from typing import Callable

import numpy as np


def numerical_grad(fn: Callable[[], float], array: np.ndarray, eps: float = 1e-3) -> np.ndarray:
    """d fn / d array by central differences, perturbing ``array`` in place.

    ``fn`` must re-read ``array`` on every call. The array is restored
    exactly after each probe.
    """
    grad = np.zeros(array.shape, dtype=np.float64)
    flat = array.reshape(-1)
    if flat.base is not array and not np.shares_memory(flat, array):
        raise ValueError("numerical_grad needs a contiguous array it can perturb in place")
    out = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = fn()
        flat[i] = orig - eps
        lo = fn()
        flat[i] = orig
        out[i] = (hi - lo) / (2.0 * eps)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-12) -> float:
    """Norm-wise relative error ``|a - n| / max(|a|, |n|)`` over a whole tensor.

    Two all-zero gradients compare as exactly equal.
    """
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    denom = max(np.linalg.norm(a), np.linalg.norm(n))
    if denom < floor:
        return 0.0
    return float(np.linalg.norm(a - n) / denom)
