"""Covariance alignment between modality feature batches.

The shared loss is a CORAL-style penalty: the squared Frobenius distance
between the two batch covariance matrices, scaled by 1/(4 d^2). Training
minimizes it to pull second-order feature statistics together ("shared"
information); the private variant maximizes it up to a cap. ``optimal_map``
builds the linear map that realizes the minimum of the covariance distance
in closed form, which serves as an independent check on what the loss can
achieve.

Directives select which modality pairs are aligned, written e.g. "V-A"
(shared), "T+A" (private), chainable with "/": "T-V/T+A".
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from . import linalg
from .errors import DegenerateBatchError, ShapeError, SpecParseError
from .validation import as_matrix, as_square

MODALITY_LETTERS = ("T", "A", "V")


class DirectiveKind(enum.Enum):
    SHARED = "shared"
    PRIVATE = "private"


@dataclass(frozen=True)
class AlignmentDirective:
    kind: DirectiveKind
    pair: tuple[str, str]  # modality letters, e.g. ("V", "A")

    def key(self) -> tuple[DirectiveKind, frozenset]:
        return (self.kind, frozenset(self.pair))


@dataclass(frozen=True)
class AlignmentSpec:
    directives: tuple[AlignmentDirective, ...] = field(default_factory=tuple)

    def __bool__(self) -> bool:
        return bool(self.directives)

    def __len__(self) -> int:
        return len(self.directives)


_OP_TO_KIND = {"-": DirectiveKind.SHARED, "+": DirectiveKind.PRIVATE}
_KIND_TO_OP = {v: k for k, v in _OP_TO_KIND.items()}


def parse_alignment_spec(text: str) -> AlignmentSpec:
    """Parse a directive string: spec := directive ("/" directive)*,
    directive := MOD ("-"|"+") MOD, MOD in {T, A, V}.

    The empty string parses to an empty spec (alignment disabled). Raises
    SpecParseError with the offending character position for unknown
    modality letters, same-modality pairs, and duplicate directives.
    """
    if text == "":
        return AlignmentSpec()
    directives: list[AlignmentDirective] = []
    seen = set()
    pos = 0
    while True:
        start = pos
        if pos + 3 > len(text):
            raise SpecParseError("incomplete directive", pos)
        first, op, second = text[pos], text[pos + 1], text[pos + 2]
        if first not in MODALITY_LETTERS:
            raise SpecParseError(f"unknown modality {first!r}", pos)
        if op not in _OP_TO_KIND:
            raise SpecParseError(f"expected '-' or '+', got {op!r}", pos + 1)
        if second not in MODALITY_LETTERS:
            raise SpecParseError(f"unknown modality {second!r}", pos + 2)
        if second == first:
            raise SpecParseError(f"directive pairs modality {first!r} with itself", pos + 2)
        directive = AlignmentDirective(_OP_TO_KIND[op], (first, second))
        if directive.key() in seen:
            raise SpecParseError("duplicate directive", start)
        seen.add(directive.key())
        directives.append(directive)
        pos += 3
        if pos == len(text):
            break
        if text[pos] != "/":
            raise SpecParseError(f"expected '/', got {text[pos]!r}", pos)
        pos += 1
    return AlignmentSpec(tuple(directives))


def render_alignment_spec(spec: AlignmentSpec) -> str:
    return "/".join(f"{d.pair[0]}{_KIND_TO_OP[d.kind]}{d.pair[1]}" for d in spec.directives)


def _pair_of_covariances(c_a, c_v, d: int | None):
    c_a = as_square(c_a, "c_a")
    c_v = as_square(c_v, "c_v")
    if c_a.shape != c_v.shape:
        raise ShapeError(f"covariance shapes {c_a.shape} and {c_v.shape} do not match")
    if d is not None and c_a.shape[0] != d:
        raise ShapeError(f"expected {d}x{d} covariances, got {c_a.shape}")
    return c_a, c_v, c_a.shape[0]


def shared_loss(c_a, c_v, d: int | None = None) -> float:
    """Covariance-matching loss ||C_a - C_v||_F^2 / (4 d^2)."""
    c_a, c_v, d = _pair_of_covariances(c_a, c_v, d)
    diff = c_a - c_v
    return float(np.sum(diff * diff)) / (4.0 * d * d)


def _centered(m: np.ndarray) -> np.ndarray:
    return m - m.mean(axis=0)


def _check_batches(m_a, m_v):
    m_a = as_matrix(m_a, "m_a")
    m_v = as_matrix(m_v, "m_v")
    if m_a.shape[1] != m_v.shape[1]:
        raise ShapeError(
            f"feature dimensions differ: {m_a.shape} vs {m_v.shape}"
        )
    for name, m in (("m_a", m_a), ("m_v", m_v)):
        if m.shape[0] < 2:
            raise DegenerateBatchError(f"{name} needs at least 2 rows, got {m.shape[0]}")
    return m_a, m_v


def shared_loss_grad(m_a, m_v) -> tuple[np.ndarray, np.ndarray]:
    """Analytic gradients of shared_loss(cov(m_a), cov(m_v)) w.r.t. both batches.

    d(theta)/d(m_a) = centered(m_a) (C_a - C_v) / (d^2 (N_a - 1)); the
    gradient w.r.t. m_v is the mirrored expression with opposite sign
    (the chain rule passes through -C_v).
    """
    m_a, m_v = _check_batches(m_a, m_v)
    d = m_a.shape[1]
    diff = linalg.covariance(m_a) - linalg.covariance(m_v)
    g_a = _centered(m_a) @ diff / (d * d * (m_a.shape[0] - 1))
    g_v = -_centered(m_v) @ diff / (d * d * (m_v.shape[0] - 1))
    return g_a, g_v


def private_loss(c_a, c_v, d: int | None = None, cap: float = 1.0) -> float:
    """Negated shared loss saturated at ``cap``: -min(shared_loss, cap).

    Minimizing this pushes the two covariances apart until the shared loss
    reaches the cap, after which the gradient is zero.
    """
    if cap <= 0:
        raise ValueError(f"cap must be positive, got {cap}")
    return -min(shared_loss(c_a, c_v, d), cap)


def private_loss_grad(m_a, m_v, cap: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of private_loss; zero once the shared loss saturates the cap."""
    if cap <= 0:
        raise ValueError(f"cap must be positive, got {cap}")
    m_a, m_v = _check_batches(m_a, m_v)
    theta = shared_loss(linalg.covariance(m_a), linalg.covariance(m_v))
    if theta >= cap:
        return np.zeros_like(m_a), np.zeros_like(m_v)
    g_a, g_v = shared_loss_grad(m_a, m_v)
    return -g_a, -g_v


@dataclass(frozen=True)
class OptimalMapResult:
    map_a: np.ndarray  # the transform A
    achieved: np.ndarray  # A' C_a A
    residual: float  # ||achieved - C_v||_F
    effective_rank: int  # min(rank C_a, rank C_v)


def optimal_map(c_a, c_v, rank_tol: float = linalg.DEFAULT_RANK_TOL) -> OptimalMapResult:
    """Closed-form minimizer A of ||A' C_a A - C_v||_F for symmetric PSD inputs.

    A whitens C_a (pseudo-inverse square root), rotates the leading
    R-dimensional eigenspace of C_v into the range of C_a, then colors with
    the square root of the rank-R truncation of C_v, where
    R = min(rank C_a, rank C_v). The achieved matrix is that truncation, so
    the residual is exactly the Frobenius mass of the dropped eigenvalues
    of C_v: zero whenever rank C_a >= rank C_v.
    """
    c_a, c_v, _ = _pair_of_covariances(c_a, c_v, None)
    dec_a = linalg._checked_psd_eig(c_a, rank_tol, "optimal_map c_a")
    dec_v = linalg._checked_psd_eig(c_v, rank_tol, "optimal_map c_v")
    rank_a = linalg.numerical_rank(dec_a.eigenvalues, rank_tol)
    rank_v = linalg.numerical_rank(dec_v.eigenvalues, rank_tol)
    r = min(rank_a, rank_v)

    lam_a = dec_a.eigenvalues
    lam_a_max = max(float(lam_a.max()), 0.0) if lam_a.size else 0.0
    inv_sqrt = np.where(lam_a > rank_tol * lam_a_max, 1.0 / np.sqrt(np.maximum(lam_a, 1e-300)), 0.0)
    whiten = (dec_a.eigenvectors * inv_sqrt) @ dec_a.eigenvectors.T

    u_a = dec_a.eigenvectors[:, :r]
    u_v = dec_v.eigenvectors[:, :r]
    rotate = u_a @ u_v.T
    color = (u_v * np.sqrt(np.maximum(dec_v.eigenvalues[:r], 0.0))) @ u_v.T

    map_a = whiten @ rotate @ color
    achieved = map_a.T @ c_a @ map_a
    residual = float(np.linalg.norm(achieved - c_v))
    return OptimalMapResult(map_a=map_a, achieved=achieved, residual=residual, effective_rank=r)
