"""Self-supervised unimodal label generation.

Labels for the per-modality subtasks are not annotated; they are generated
from geometry: per feature source (the fused multimodal features plus each
modality's projected features) we keep a positive and a negative class
center, measure how much closer a sample sits to one center than the other,
and shift the ground-truth label by the difference between the modality's
offset and the multimodal offset. A momentum average over generation events
stabilizes the labels across epochs.

The whole procedure is gradient-free: generated labels are constants with
respect to the model parameters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError
from .validation import check_consistent_length

MODALITIES = ("t", "a", "v")

_OFFSET_EPS = 1e-8


@dataclass
class CenterPair:
    """Positive/negative class centers for one feature source; a side with
    zero count is absent (None)."""

    positive: np.ndarray | None
    negative: np.ndarray | None
    n_positive: int
    n_negative: int


def class_centers(features: np.ndarray, labels: np.ndarray) -> CenterPair:
    """Mean feature vector per label sign; zero-labeled samples are excluded."""
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    check_consistent_length(features, labels)
    if len(features) == 0:
        raise ContractError("class_centers needs at least one sample")
    pos = labels > 0
    neg = labels < 0
    return CenterPair(
        positive=features[pos].mean(axis=0) if pos.any() else None,
        negative=features[neg].mean(axis=0) if neg.any() else None,
        n_positive=int(pos.sum()),
        n_negative=int(neg.sum()),
    )


def update_centers(features: dict[str, np.ndarray],
                   labels: dict[str, np.ndarray]) -> dict[str, CenterPair]:
    """Centers for every feature source ('all' plus each modality)."""
    return {source: class_centers(features[source], labels[source]) for source in features}


def relative_offset(feature: np.ndarray, centers: CenterPair) -> float:
    """Signed closeness to the positive center, in (-1, 1).

    Distances are scaled by sqrt(dim) so the offset is width-independent:
    alpha = (Dn - Dp) / (Dp + Dn + eps). Positive means closer to the
    positive center. If either center is absent the offset is 0.
    """
    if centers.positive is None or centers.negative is None:
        return 0.0
    feature = np.asarray(feature, dtype=np.float64)
    root_dim = np.sqrt(feature.shape[-1])
    d_pos = float(np.linalg.norm(feature - centers.positive)) / root_dim
    d_neg = float(np.linalg.norm(feature - centers.negative)) / root_dim
    return (d_neg - d_pos) / (d_pos + d_neg + _OFFSET_EPS)


def generate_label(alpha_s: float, alpha_all: float, y_gt: float, beta: float,
                   label_min: float, label_max: float) -> float:
    """Shift the ground truth by the offset migration, clamped to the label range."""
    return float(np.clip(y_gt + beta * (alpha_s - alpha_all), label_min, label_max))


def momentum_update(old: float, new_raw: float, t: int) -> float:
    """Momentum average y(t) = ((t-1) old + 2 new) / (t+1).

    t counts generation events for this sample/modality, starting at 1
    (t = 1 returns new_raw). Written in delta form so a constant stream is
    an exact fixed point. The weight of the k-th raw label in y(t) is
    2k / (t (t+1)).
    """
    if t < 1:
        raise ContractError(f"momentum_update needs t >= 1, got {t}")
    return old + (2.0 / (t + 1.0)) * (new_raw - old)


class LabelStore:
    """Per-sample, per-modality generated labels with their update counts.

    Labels start at the ground truth (the warm-up used during the first
    epoch) and are regenerated at epoch boundaries.
    """

    def __init__(self, y_gt, ids=None, label_min: float = -3.0, label_max: float = 3.0):
        self.y_gt = np.asarray(y_gt, dtype=np.float64).copy()
        n = len(self.y_gt)
        self.ids = list(range(n)) if ids is None else list(ids)
        if len(self.ids) != n:
            raise ContractError(f"{len(self.ids)} ids for {n} labels")
        self.label_min = float(label_min)
        self.label_max = float(label_max)
        self.labels = np.tile(self.y_gt[:, None], (1, len(MODALITIES)))
        self.counts = np.zeros((n, len(MODALITIES)), dtype=np.int64)

    def __len__(self) -> int:
        return len(self.y_gt)

    def column(self, modality: str) -> np.ndarray:
        return self.labels[:, MODALITIES.index(modality)]

    def slice(self, indices) -> dict[str, np.ndarray]:
        """Current labels for a batch, keyed by modality."""
        return {m: self.labels[indices, k].copy() for k, m in enumerate(MODALITIES)}

    def record(self, index: int, modality: str, raw_label: float) -> float:
        """Fold one newly generated label into the momentum average."""
        k = MODALITIES.index(modality)
        t = int(self.counts[index, k]) + 1
        value = momentum_update(float(self.labels[index, k]), raw_label, t)
        value = float(np.clip(value, self.label_min, self.label_max))
        self.labels[index, k] = value
        self.counts[index, k] = t
        return value

    def to_dict(self) -> dict:
        return {
            "ids": self.ids,
            "y_gt": self.y_gt.tolist(),
            "labels": self.labels.tolist(),
            "counts": self.counts.tolist(),
            "label_min": self.label_min,
            "label_max": self.label_max,
            "modalities": list(MODALITIES),
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "LabelStore":
        store = cls(
            payload["y_gt"],
            ids=payload["ids"],
            label_min=payload["label_min"],
            label_max=payload["label_max"],
        )
        store.labels = np.asarray(payload["labels"], dtype=np.float64)
        store.counts = np.asarray(payload["counts"], dtype=np.int64)
        return store


def regenerate_labels(store: LabelStore, features: dict[str, np.ndarray],
                      beta: float) -> int:
    """One generation event for every sample and modality.

    ``features`` holds this epoch's cached feature snapshots per source.
    Centers are rebuilt first ('all' uses the ground truth signs, each
    modality uses its current generated labels), then every label is shifted
    and folded into the momentum average. Returns the number of labels that
    changed.
    """
    labels = {"all": store.y_gt}
    labels.update({m: store.column(m).copy() for m in MODALITIES})
    centers = update_centers(features, labels)
    changed = 0
    for i in range(len(store)):
        alpha_all = relative_offset(features["all"][i], centers["all"])
        for m in MODALITIES:
            alpha_s = relative_offset(features[m][i], centers[m])
            raw = generate_label(
                alpha_s, alpha_all, float(store.y_gt[i]), beta, store.label_min, store.label_max
            )
            before = float(store.column(m)[i])
            after = store.record(i, m, raw)
            if after != before:
                changed += 1
    return changed
