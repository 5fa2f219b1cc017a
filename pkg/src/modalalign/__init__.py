"""modalalign: covariance-alignment multimodal regression with
self-generated unimodal labels.

The estimator surface is :class:`MultimodalRegressor`; the numerical
building blocks (covariance alignment losses, the closed-form optimal map,
the hand-differentiated network, label generation) are importable from the
submodules and re-exported here.
"""

from .alignment import (
    AlignmentDirective,
    AlignmentSpec,
    DirectiveKind,
    OptimalMapResult,
    optimal_map,
    parse_alignment_spec,
    private_loss,
    render_alignment_spec,
    shared_loss,
    shared_loss_grad,
)
from .data import Sample, SynthConfig, gen_synthetic, load_jsonl, save_jsonl, split_dataset
from .estimator import MultimodalRegressor
from .linalg import EigenDecomposition, covariance, psd_sqrt_pinv, sym_eig
from .metrics import MetricsReport, classification_metrics, evaluate_predictions, regression_metrics
from .training import TrainConfig, alignment_theta, gradcheck, run_training
from .ulgm import LabelStore, generate_label, momentum_update, relative_offset

__version__ = "0.1.0"

__all__ = [
    "AlignmentDirective",
    "AlignmentSpec",
    "DirectiveKind",
    "EigenDecomposition",
    "LabelStore",
    "MetricsReport",
    "MultimodalRegressor",
    "OptimalMapResult",
    "Sample",
    "SynthConfig",
    "TrainConfig",
    "alignment_theta",
    "classification_metrics",
    "covariance",
    "evaluate_predictions",
    "gen_synthetic",
    "generate_label",
    "gradcheck",
    "load_jsonl",
    "momentum_update",
    "optimal_map",
    "parse_alignment_spec",
    "private_loss",
    "psd_sqrt_pinv",
    "regression_metrics",
    "relative_offset",
    "render_alignment_spec",
    "run_training",
    "save_jsonl",
    "shared_loss",
    "shared_loss_grad",
    "split_dataset",
    "sym_eig",
]
