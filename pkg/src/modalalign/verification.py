"""Seeded verification suites behind ``modalalign verify``.

Each suite returns {"checks": {name: {"value", "tolerance", "passed"}},
"passed": bool} where ``value`` is the worst observed error for that check.
The gradient-check suite lives in :mod:`modalalign.training`.
"""

from __future__ import annotations

import numpy as np

from . import linalg
from .alignment import optimal_map
from .ulgm import CenterPair, generate_label, momentum_update, relative_offset


def _check(value: float, tolerance: float) -> dict:
    return {"value": float(value), "tolerance": tolerance, "passed": bool(value <= tolerance)}


def _random_psd(rng, d: int, rank: int) -> np.ndarray:
    g = rng.normal(size=(d, rank))
    return g @ g.T


def verify_optimal_map(seed: int = 0) -> dict:
    """Exercise the closed-form alignment map on random covariance pairs.

    Full-rank-enough case (rank C_a >= rank C_v): the map must reproduce
    C_v up to round-off. Rank-deficient case (rank C_a < rank C_v): the
    squared residual must equal the spectral mass dropped beyond
    R = min(rank C_a, rank C_v), with the reference spectrum taken from
    numpy's eigensolver.
    """
    rng = np.random.default_rng([seed, 71])
    worst_recovery = 0.0
    for i in range(50):
        d = int(rng.integers(2, 8))
        rank_v = d if i % 5 else int(rng.integers(1, d + 1))
        c_a = _random_psd(rng, d, d) + 0.05 * np.eye(d)
        c_v = _random_psd(rng, d, rank_v)
        res = optimal_map(c_a, c_v)
        worst_recovery = max(worst_recovery, res.residual / np.linalg.norm(c_v))

    worst_spectrum = 0.0
    for _ in range(20):
        d = int(rng.integers(3, 8))
        rank_a = int(rng.integers(1, d - 1))
        rank_v = int(rng.integers(rank_a + 1, d + 1))
        c_a = _random_psd(rng, d, rank_a)
        c_v = _random_psd(rng, d, rank_v)
        res = optimal_map(c_a, c_v)
        lam = np.sort(np.linalg.eigvalsh(c_v))[::-1]
        dropped = float(np.sum(lam[res.effective_rank :] ** 2))
        worst_spectrum = max(worst_spectrum, abs(res.residual**2 - dropped) / dropped)

    checks = {
        "full_rank_recovery": _check(worst_recovery, 1e-8),
        "dropped_spectrum": _check(worst_spectrum, 1e-8),
    }
    return {"checks": checks, "passed": all(c["passed"] for c in checks.values())}


def verify_ulgm(seed: int = 0) -> dict:
    """Check the label-generation arithmetic: momentum closed form,
    constant-stream fixed point, offset bounds, and clamping."""
    rng = np.random.default_rng([seed, 73])

    # Weight of the k-th raw label after t events must be 2k / (t (t+1)).
    worst_coeff = 0.0
    for t_max in range(1, 11):
        for k in range(1, t_max + 1):
            y = 0.0
            for t in range(1, t_max + 1):
                y = momentum_update(y, 1.0 if t == k else 0.0, t)
            worst_coeff = max(worst_coeff, abs(y - 2.0 * k / (t_max * (t_max + 1))))

    worst_fixed = 0.0
    for _ in range(20):
        c = float(rng.normal())
        y = c
        for t in range(1, 12):
            y = momentum_update(y, c, t)
            worst_fixed = max(worst_fixed, abs(y - c))

    worst_alpha = 0.0
    worst_flip = 0.0
    for _ in range(200):
        dim = int(rng.integers(1, 8))
        pos, neg, f = rng.normal(size=(3, dim))
        pair = CenterPair(pos, neg, 1, 1)
        alpha = relative_offset(f, pair)
        worst_alpha = max(worst_alpha, abs(alpha) - 1.0 + 1e-15)
        flipped = relative_offset(f, CenterPair(neg, pos, 1, 1))
        worst_flip = max(worst_flip, abs(alpha + flipped))

    worst_clamp = 0.0
    for _ in range(100):
        y = generate_label(float(rng.uniform(-1, 1)), float(rng.uniform(-1, 1)),
                           float(rng.uniform(-3, 3)), 3.0, -3.0, 3.0)
        worst_clamp = max(worst_clamp, max(y - 3.0, -3.0 - y))

    checks = {
        "momentum_closed_form": _check(worst_coeff, 1e-12),
        "constant_stream_fixed_point": _check(worst_fixed, 0.0),
        "offset_bounded": _check(worst_alpha, 0.0),
        "offset_sign_flip": _check(worst_flip, 1e-12),
        "labels_clamped": _check(worst_clamp, 0.0),
    }
    return {"checks": checks, "passed": all(c["passed"] for c in checks.values())}
