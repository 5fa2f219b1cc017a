"""Dense real matrix routines: batch covariance, symmetric eigendecomposition,
and spectral pseudo-inverse square roots.

Everything operates on float64 ndarrays. The eigensolver is a cyclic Jacobi
iteration, which is simple and accurate for the moderate dimensions used here
(d <= 256); tests cross-check it against ``numpy.linalg.eigh``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DegenerateBatchError, NotPSDError, ShapeError
from .validation import as_matrix, as_square, check_same_shape

DEFAULT_RANK_TOL = 1e-10

_JACOBI_MAX_SWEEPS = 100
_JACOBI_OFF_TOL = 1e-12  # relative to the Frobenius norm of the input


def matmul(a, b) -> np.ndarray:
    a = as_matrix(a, "matmul lhs")
    b = as_matrix(b, "matmul rhs")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    return a @ b


def add(a, b) -> np.ndarray:
    a = as_matrix(a, "add lhs")
    b = as_matrix(b, "add rhs")
    check_same_shape(a, b, "add")
    return a + b


def scale(a, s: float) -> np.ndarray:
    return as_matrix(a, "scale operand") * float(s)


def transpose(a) -> np.ndarray:
    return as_matrix(a, "transpose operand").T.copy()


def frobenius_norm(a) -> float:
    """sqrt of the sum of squared entries."""
    a = as_matrix(a, "frobenius_norm operand")
    return float(np.sqrt(np.sum(a * a)))


def covariance(m) -> np.ndarray:
    """Unbiased sample covariance of a batch matrix (rows are samples).

    Computed as (M'M - s s'/N) / (N-1) with s the column-sum vector, which
    equals the mean-centered two-pass formula. The result is symmetrized to
    remove round-off asymmetry.
    """
    m = as_matrix(m, "covariance batch")
    n = m.shape[0]
    if n < 2:
        raise DegenerateBatchError(f"covariance needs at least 2 rows, got {n}")
    s = m.sum(axis=0)
    c = (m.T @ m - np.outer(s, s) / n) / (n - 1)
    return (c + c.T) / 2.0


@dataclass(frozen=True)
class EigenDecomposition:
    """Eigenvalues sorted descending; eigenvector column k pairs with eigenvalue k."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray


def sym_eig(c) -> EigenDecomposition:
    """Eigendecomposition of a symmetric matrix via cyclic Jacobi rotations.

    Sweeps stop once the off-diagonal Frobenius mass falls below
    1e-12 * ||c||_F (at most 100 sweeps). Raises ContractError for
    non-square input or asymmetry beyond 1e-9 (relative to the largest
    entry, floored at 1).
    """
    a = as_square(c, "sym_eig input")
    n = a.shape[0]
    scale_ = max(1.0, float(np.max(np.abs(a))) if a.size else 0.0)
    asym = float(np.max(np.abs(a - a.T))) if a.size else 0.0
    if asym > 1e-9 * scale_:
        raise ContractError(f"sym_eig input is not symmetric (max asymmetry {asym:.3e})")
    a = (a + a.T) / 2.0

    v = np.eye(n)
    norm = float(np.linalg.norm(a))
    if n > 1 and norm > 0.0:
        tol = _JACOBI_OFF_TOL * norm
        off_mask = ~np.eye(n, dtype=bool)
        for _ in range(_JACOBI_MAX_SWEEPS):
            # computed from the off-diagonal entries directly; the
            # sum-of-squares difference cancels catastrophically here
            off = float(np.linalg.norm(a[off_mask]))
            if off <= tol:
                break
            for p in range(n - 1):
                for q in range(p + 1, n):
                    apq = a[p, q]
                    if abs(apq) <= 1e-300:
                        continue
                    theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                    if abs(theta) > 1e10:
                        t = 1.0 / (2.0 * theta)
                    else:
                        t = math.copysign(1.0, theta) / (abs(theta) + math.hypot(theta, 1.0))
                    cos = 1.0 / math.sqrt(t * t + 1.0)
                    sin = t * cos
                    # A <- G' A G applied as a column then a row update.
                    col_p, col_q = a[:, p].copy(), a[:, q].copy()
                    a[:, p] = cos * col_p - sin * col_q
                    a[:, q] = sin * col_p + cos * col_q
                    row_p, row_q = a[p, :].copy(), a[q, :].copy()
                    a[p, :] = cos * row_p - sin * row_q
                    a[q, :] = sin * row_p + cos * row_q
                    a[p, q] = 0.0
                    a[q, p] = 0.0
                    vp, vq = v[:, p].copy(), v[:, q].copy()
                    v[:, p] = cos * vp - sin * vq
                    v[:, q] = sin * vp + cos * vq

    order = np.argsort(-np.diag(a), kind="stable")
    return EigenDecomposition(np.diag(a)[order].copy(), v[:, order].copy())


def numerical_rank(eigenvalues: np.ndarray, rank_tol: float = DEFAULT_RANK_TOL) -> int:
    """Count of eigenvalues above rank_tol * largest eigenvalue."""
    lam_max = max(float(np.max(eigenvalues)), 0.0) if eigenvalues.size else 0.0
    return int(np.sum(eigenvalues > rank_tol * lam_max)) if lam_max > 0.0 else 0


def _checked_psd_eig(c, rank_tol: float, name: str) -> EigenDecomposition:
    dec = sym_eig(c)
    lam = dec.eigenvalues
    lam_max = max(float(lam.max()), 0.0) if lam.size else 0.0
    if lam.size and float(lam.min()) < -1e-9 * lam_max:
        raise NotPSDError(
            f"{name}: eigenvalue {float(lam.min()):.3e} below the PSD tolerance"
        )
    return dec


def psd_sqrt_pinv(c, rank_tol: float = DEFAULT_RANK_TOL) -> np.ndarray:
    """Pseudo-inverse square root U diag(1/sqrt(lam)) U' of a symmetric PSD matrix.

    Eigenvalues below rank_tol * lam_max are treated as zero and contribute
    nothing (pseudo-inverse branch).
    """
    dec = _checked_psd_eig(c, rank_tol, "psd_sqrt_pinv")
    lam = dec.eigenvalues
    lam_max = max(float(lam.max()), 0.0) if lam.size else 0.0
    inv_sqrt = np.where(lam > rank_tol * lam_max, 1.0 / np.sqrt(np.maximum(lam, 1e-300)), 0.0)
    x = (dec.eigenvectors * inv_sqrt) @ dec.eigenvectors.T
    return (x + x.T) / 2.0


def psd_sqrt_truncated(c, rank: int, rank_tol: float = DEFAULT_RANK_TOL) -> np.ndarray:
    """Square root of the best rank-``rank`` PSD approximation of ``c``."""
    dec = _checked_psd_eig(c, rank_tol, "psd_sqrt_truncated")
    lam = np.maximum(dec.eigenvalues[:rank], 0.0)
    u = dec.eigenvectors[:, :rank]
    x = (u * np.sqrt(lam)) @ u.T
    return (x + x.T) / 2.0
