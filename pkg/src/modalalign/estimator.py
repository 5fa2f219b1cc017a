"""Scikit-learn style estimator wrapping the trainer.

``X`` is a sequence of per-sample dicts with "text", "audio" and "vision"
step-major matrices (or :class:`~modalalign.data.Sample` objects); ``y`` is
the per-sample sentiment score. Constructor arguments mirror the trainer
configuration one-to-one, so ``get_params`` / ``set_params`` / ``clone``
compose with the usual model-selection tooling.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.exceptions import NotFittedError

from .data import Sample, check_uniform_step_dims
from .errors import DataError
from .training import TrainConfig, predict_dataset, projected_features, run_training
from .validation import as_matrix, as_vector

_MODALITY_KEYS = ("text", "audio", "vision")


def _as_samples(X, y=None) -> list[Sample]:
    labels = np.zeros(len(X)) if y is None else as_vector(y, "y")
    if y is not None and len(labels) != len(X):
        raise DataError(f"{len(X)} samples but {len(labels)} labels")
    samples = []
    for i, row in enumerate(X):
        if isinstance(row, Sample):
            samples.append(
                Sample(id=row.id, text=row.text, audio=row.audio, vision=row.vision,
                       label=float(labels[i]) if y is not None else row.label)
            )
            continue
        try:
            matrices = {k: as_matrix(row[k], f"X[{i}][{k!r}]") for k in _MODALITY_KEYS}
        except (KeyError, TypeError) as exc:
            raise DataError(
                f"X[{i}] must provide 'text', 'audio' and 'vision' matrices: {exc}"
            ) from None
        samples.append(Sample(id=i, text=matrices["text"], audio=matrices["audio"],
                              vision=matrices["vision"], label=float(labels[i])))
    return samples


class MultimodalRegressor(BaseEstimator, RegressorMixin):
    """Multi-task multimodal sentiment regressor.

    Fits the hand-differentiated three-encoder network with the combined
    objective: absolute multimodal error, tanh-weighted absolute unimodal
    errors against self-generated labels, and the configured covariance
    alignment terms.

    Parameters mirror :class:`modalalign.training.TrainConfig`; see the
    README for the alignment directive grammar ("V-A", "T-V/T+A", ...).
    """

    def __init__(self, epochs=20, batch_size=32, learning_rate=1e-3, optimizer="adam",
                 alignment_spec="", lambda_share=1.0, private_cap=1.0,
                 directive_weights=None, ulgm_enabled=True, ulgm_beta=None,
                 label_min=-3.0, label_max=3.0, omega_ref="prediction", grad_clip=5.0,
                 seed=0, d_t=16, d_a=16, d_v=16, d_all=32, d_proj=32):
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.optimizer = optimizer
        self.alignment_spec = alignment_spec
        self.lambda_share = lambda_share
        self.private_cap = private_cap
        self.directive_weights = directive_weights
        self.ulgm_enabled = ulgm_enabled
        self.ulgm_beta = ulgm_beta
        self.label_min = label_min
        self.label_max = label_max
        self.omega_ref = omega_ref
        self.grad_clip = grad_clip
        self.seed = seed
        self.d_t = d_t
        self.d_a = d_a
        self.d_v = d_v
        self.d_all = d_all
        self.d_proj = d_proj

    def _config(self) -> TrainConfig:
        weights = self.directive_weights
        if isinstance(weights, list):
            weights = tuple(weights)
        return TrainConfig(
            epochs=self.epochs, batch_size=self.batch_size,
            learning_rate=self.learning_rate, optimizer=self.optimizer,
            alignment_spec=self.alignment_spec, lambda_share=self.lambda_share,
            private_cap=self.private_cap, directive_weights=weights,
            ulgm_enabled=self.ulgm_enabled, ulgm_beta=self.ulgm_beta,
            label_min=self.label_min, label_max=self.label_max,
            omega_ref=self.omega_ref, grad_clip=self.grad_clip, seed=self.seed,
            d_t=self.d_t, d_a=self.d_a, d_v=self.d_v, d_all=self.d_all,
            d_proj=self.d_proj,
        ).validate()

    def fit(self, X, y):
        """Train on (X, y); returns self."""
        cfg = self._config()
        samples = _as_samples(X, y)
        labels = np.array([s.label for s in samples])
        if np.any(labels < cfg.label_min) or np.any(labels > cfg.label_max):
            raise DataError(
                f"labels outside the configured range [{cfg.label_min}, {cfg.label_max}]"
            )
        result = run_training(samples, cfg)
        self.config_ = result.config
        self.dims_ = result.dims
        self.params_ = result.params
        self.opt_state_ = result.opt_state
        self.label_store_ = result.label_store
        self.history_ = result.history
        return self

    def _check_fitted(self):
        if not hasattr(self, "params_"):
            raise NotFittedError("this MultimodalRegressor is not fitted yet")

    def _check_dims(self, samples: list[Sample]):
        in_dims = check_uniform_step_dims(samples)
        expected = (self.dims_.in_t, self.dims_.in_a, self.dims_.in_v)
        if in_dims != expected:
            raise DataError(f"step dims {in_dims} do not match fitted dims {expected}")

    def predict(self, X) -> np.ndarray:
        """Multimodal sentiment predictions for X."""
        self._check_fitted()
        samples = _as_samples(X)
        self._check_dims(samples)
        return predict_dataset(samples, self.params_, self.dims_)

    def features(self, X) -> dict[str, np.ndarray]:
        """Projected per-modality features ('t', 'a', 'v') and fused
        features ('all') for X; useful for inspecting alignment."""
        self._check_fitted()
        samples = _as_samples(X)
        self._check_dims(samples)
        return projected_features(samples, self.params_, self.dims_)
