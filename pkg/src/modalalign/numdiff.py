"""Central finite differences and the relative-error metric used by every
gradient check in the library and its tests."""

from __future__ import annotations

from typing import Callable

import numpy as np

DEFAULT_STEP = 1e-5


def central_difference(f: Callable[[np.ndarray], float], x0: np.ndarray,
                       h: float = DEFAULT_STEP) -> np.ndarray:
    """Entrywise central difference (f(x+h) - f(x-h)) / 2h around x0."""
    x0 = np.asarray(x0, dtype=np.float64)
    grad = np.zeros_like(x0)
    flat = grad.reshape(-1)
    base = x0.copy().reshape(-1)
    for j in range(base.size):
        orig = base[j]
        base[j] = orig + h
        f_plus = f(base.reshape(x0.shape))
        base[j] = orig - h
        f_minus = f(base.reshape(x0.shape))
        base[j] = orig
        flat[j] = (f_plus - f_minus) / (2.0 * h)
    return grad


def max_rel_err(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Max entrywise |a - n| / max(|a|, |n|, floor).

    The floor is 1e-3 of the larger gradient's max magnitude (plus a tiny
    absolute guard), so entries that are incidentally near zero are judged
    against the block's scale instead of blowing up the ratio.
    """
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    if a.shape != n.shape:
        raise ValueError(f"gradient shapes differ: {a.shape} vs {n.shape}")
    if a.size == 0:
        return 0.0
    floor = 1e-3 * max(np.max(np.abs(a)), np.max(np.abs(n))) + 1e-12
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom))
