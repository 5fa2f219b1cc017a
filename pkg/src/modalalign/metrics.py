"""Evaluation metrics: MAE, Pearson correlation, binary accuracy in both
reporting conventions, and support-weighted F1.

Binary accuracy is reported twice because the sentiment literature uses two
incompatible conventions for the sign split:
  * negative vs non-negative, over all samples;
  * negative vs positive, excluding samples whose ground truth is exactly 0.
The weighted F1 uses the second binarization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .validation import as_vector, check_consistent_length


def regression_metrics(pred, gt) -> tuple[float, float]:
    """(mean absolute error, Pearson correlation).

    The correlation is NaN when either vector has zero variance.
    """
    pred = as_vector(pred, "pred")
    gt = as_vector(gt, "gt")
    n = check_consistent_length(pred, gt)
    if n == 0:
        raise ValueError("regression_metrics needs at least one sample")
    mae = float(np.mean(np.abs(pred - gt)))
    p = pred - pred.mean()
    g = gt - gt.mean()
    denom = np.sqrt((p @ p) * (g @ g))
    corr = float(p @ g / denom) if denom > 0 else float("nan")
    return mae, corr


def _binary_f1_weighted(gt_pos: np.ndarray, pred_pos: np.ndarray) -> float:
    """F1 per class (positive / negative), weighted by ground-truth support."""
    total = len(gt_pos)
    score = 0.0
    for positive_class in (True, False):
        g = gt_pos == positive_class
        p = pred_pos == positive_class
        support = int(g.sum())
        if support == 0:
            continue
        tp = int((g & p).sum())
        precision = tp / p.sum() if p.sum() else 0.0
        recall = tp / support
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        score += f1 * support / total
    return score


def classification_metrics(pred, gt) -> tuple[tuple[float, float], float]:
    """((acc2 negative/non-negative, acc2 negative/positive), weighted F1).

    The second accuracy and the F1 exclude samples whose ground-truth label
    is exactly zero and are NaN when no samples remain.
    """
    pred = as_vector(pred, "pred")
    gt = as_vector(gt, "gt")
    check_consistent_length(pred, gt)
    acc_all = float(np.mean((pred < 0) == (gt < 0)))
    nonzero = gt != 0
    if not nonzero.any():
        return (acc_all, float("nan")), float("nan")
    p, g = pred[nonzero], gt[nonzero]
    acc_nz = float(np.mean((p < 0) == (g < 0)))
    f1 = _binary_f1_weighted(gt_pos=g >= 0, pred_pos=p >= 0)
    return (acc_all, acc_nz), f1


@dataclass
class MetricsReport:
    mae: float
    corr: float  # NaN when undefined
    acc2_neg_nonneg: float
    acc2_neg_pos: float  # NaN when every label is zero
    f1_weighted: float  # NaN when every label is zero
    n: int
    n_nonzero: int

    @property
    def corr_defined(self) -> bool:
        return not math.isnan(self.corr)

    def to_dict(self) -> dict:
        def clean(x):
            return None if math.isnan(x) else x

        return {
            "mae": self.mae,
            "corr": clean(self.corr),
            "corr_defined": self.corr_defined,
            "acc2_neg_nonneg": self.acc2_neg_nonneg,
            "acc2_neg_pos": clean(self.acc2_neg_pos),
            "f1_weighted": clean(self.f1_weighted),
            "n": self.n,
            "n_nonzero": self.n_nonzero,
        }


def evaluate_predictions(pred, gt) -> MetricsReport:
    pred = as_vector(pred, "pred")
    gt = as_vector(gt, "gt")
    mae, corr = regression_metrics(pred, gt)
    (acc_all, acc_nz), f1 = classification_metrics(pred, gt)
    return MetricsReport(
        mae=mae,
        corr=corr,
        acc2_neg_nonneg=acc_all,
        acc2_neg_pos=acc_nz,
        f1_weighted=f1,
        n=len(gt),
        n_nonzero=int(np.sum(gt != 0)),
    )


_COLUMNS = ("mae", "corr", "acc2_neg_nonneg", "acc2_neg_pos", "f1_weighted", "n")


def format_table(reports: dict[str, MetricsReport]) -> str:
    """Aligned plain-text table, one row per split."""
    header = ["split"] + list(_COLUMNS)
    rows = [header]
    for name, report in reports.items():
        values = report.to_dict()
        row = [name]
        for col in _COLUMNS:
            v = values[col]
            if v is None:
                row.append("undefined")
            elif col == "n":
                row.append(str(v))
            else:
                row.append(f"{v:.4f}")
        rows.append(row)
    widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip() for row in rows]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"
