"""Multi-task training: loss assembly, optimizer, epoch loop, gradient checks.

Per batch of size N the objective is

    total = (1/N) sum_i (l1_i + l2_i) + l3

where l1_i is the absolute multimodal error |y_gt - y_all|, l2_i sums the
per-modality absolute errors against the generated labels weighted by
w_s = tanh(|label_s - y_all|), and l3 adds the configured covariance
alignment losses over the batch's projected features. The tanh weight is a
function of the multimodal prediction, so its gradient path is kept (the
weight reference can be switched to the ground truth, which detaches it).
Generated labels are always constants.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from . import alignment as al
from . import linalg
from . import model as md
from . import ulgm
from .data import Sample, batch_sequences, check_uniform_step_dims, labels_of
from .errors import ConfigError, DegenerateBatchError, NumericError
from .metrics import MetricsReport, evaluate_predictions
from .numdiff import central_difference, max_rel_err

_SHUFFLE_STREAM = 41

CHECKPOINT_FORMAT_VERSION = 1

# Directive letters -> feature keys.
_LETTER_TO_MODALITY = {"T": "t", "A": "a", "V": "v"}


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 32
    learning_rate: float = 1e-3
    optimizer: str = "adam"  # "adam" | "sgd"
    alignment_spec: str = ""
    lambda_share: float = 1.0
    private_cap: float = 1.0
    directive_weights: tuple[float, ...] | None = None
    ulgm_enabled: bool = True
    ulgm_beta: float | None = None  # default: (label_max - label_min) / 2
    label_min: float = -3.0
    label_max: float = 3.0
    omega_ref: str = "prediction"  # "prediction" | "ground_truth"
    grad_clip: float = 5.0  # global norm; 0 disables
    seed: int = 0
    d_t: int = 16
    d_a: int = 16
    d_v: int = 16
    d_all: int = 32
    d_proj: int = 32

    def validate(self) -> "TrainConfig":
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.omega_ref not in ("prediction", "ground_truth"):
            raise ConfigError(f"unknown omega_ref {self.omega_ref!r}")
        if self.label_min >= self.label_max:
            raise ConfigError(f"empty label range [{self.label_min}, {self.label_max}]")
        if self.private_cap <= 0:
            raise ConfigError(f"private_cap must be positive, got {self.private_cap}")
        if self.lambda_share < 0 or self.grad_clip < 0:
            raise ConfigError("lambda_share and grad_clip must be >= 0")
        if min(self.d_t, self.d_a, self.d_v, self.d_all, self.d_proj) < 1:
            raise ConfigError("model widths must be >= 1")
        spec = self.spec()
        if self.directive_weights is not None and len(self.directive_weights) != len(spec):
            raise ConfigError(
                f"{len(self.directive_weights)} directive_weights for {len(spec)} directives"
            )
        return self

    def spec(self) -> al.AlignmentSpec:
        return al.parse_alignment_spec(self.alignment_spec)

    def beta(self) -> float:
        if self.ulgm_beta is not None:
            return self.ulgm_beta
        return (self.label_max - self.label_min) / 2.0

    def to_dict(self) -> dict:
        payload = dataclasses.asdict(self)
        if payload["directive_weights"] is not None:
            payload["directive_weights"] = list(payload["directive_weights"])
        return payload

    @classmethod
    def from_dict(cls, payload: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(payload) - known
        if unknown:
            raise ConfigError(f"unknown TrainConfig keys: {sorted(unknown)}")
        payload = dict(payload)
        if isinstance(payload.get("directive_weights"), list):
            payload["directive_weights"] = tuple(payload["directive_weights"])
        return cls(**payload).validate()


@dataclass
class LossBreakdown:
    l1: float
    l2: float
    l3: float
    total: float
    weights: dict[str, np.ndarray]  # per-sample tanh weights, keyed by modality
    l1_per_sample: np.ndarray
    l2_per_sample: np.ndarray


def _fusion_of(trace) -> md.FusionTrace:
    return trace.fusion if isinstance(trace, md.ForwardTrace) else trace


def _directive_batches(trace: md.FusionTrace, directive: al.AlignmentDirective):
    first = _LETTER_TO_MODALITY[directive.pair[0]]
    second = _LETTER_TO_MODALITY[directive.pair[1]]
    return first, second, trace.proj[first], trace.proj[second]


def _alignment_terms(trace: md.FusionTrace, spec: al.AlignmentSpec, cfg: TrainConfig,
                     with_grads: bool):
    n = trace.y_all.shape[0]
    if spec and n < 2:
        raise DegenerateBatchError(
            f"alignment needs batches of at least 2 samples, got {n}"
        )
    l3 = 0.0
    d_proj = {m: np.zeros_like(trace.proj[m]) for m in md.MODALITIES} if with_grads else None
    weights = cfg.directive_weights or (1.0,) * len(spec)
    for directive, w in zip(spec.directives, weights):
        first, second, m_a, m_v = _directive_batches(trace, directive)
        c_a, c_v = linalg.covariance(m_a), linalg.covariance(m_v)
        if directive.kind is al.DirectiveKind.SHARED:
            l3 += w * al.shared_loss(c_a, c_v)
            if with_grads:
                g_a, g_v = al.shared_loss_grad(m_a, m_v)
        else:
            l3 += w * al.private_loss(c_a, c_v, cap=cfg.private_cap)
            if with_grads:
                g_a, g_v = al.private_loss_grad(m_a, m_v, cap=cfg.private_cap)
        if with_grads:
            d_proj[first] += cfg.lambda_share * w * g_a
            d_proj[second] += cfg.lambda_share * w * g_v
    return cfg.lambda_share * l3, d_proj


def _loss_core(trace, labels: dict[str, np.ndarray], y_gt: np.ndarray,
               spec: al.AlignmentSpec, cfg: TrainConfig, with_grads: bool):
    trace = _fusion_of(trace)
    n = trace.y_all.shape[0]
    if n == 0:
        raise DegenerateBatchError("empty batch")
    y_gt = np.asarray(y_gt, dtype=np.float64)
    l1_per_sample = np.abs(y_gt - trace.y_all)

    weights: dict[str, np.ndarray] = {}
    l2_per_sample = np.zeros(n)
    d_y_all = np.sign(trace.y_all - y_gt) / n if with_grads else None
    d_y_uni = {m: np.zeros(n) for m in md.MODALITIES} if with_grads else None
    if cfg.ulgm_enabled:
        ref = trace.y_all if cfg.omega_ref == "prediction" else y_gt
        for m in md.MODALITIES:
            gap_ref = np.abs(labels[m] - ref)
            w = np.tanh(gap_ref)
            weights[m] = w
            residual = labels[m] - trace.y_uni[m]
            l2_per_sample += w * np.abs(residual)
            if with_grads:
                d_y_uni[m] = w * np.sign(-residual) / n
                if cfg.omega_ref == "prediction":
                    # weight depends on the multimodal prediction
                    d_w = (1.0 - w * w) * np.sign(ref - labels[m])
                    d_y_all += np.abs(residual) * d_w / n
    else:
        weights = {m: np.zeros(n) for m in md.MODALITIES}

    l3, d_proj = _alignment_terms(trace, spec, cfg, with_grads)
    l1 = float(l1_per_sample.mean())
    l2 = float(l2_per_sample.mean())
    breakdown = LossBreakdown(
        l1=l1,
        l2=l2,
        l3=l3,
        total=l1 + l2 + l3,
        weights=weights,
        l1_per_sample=l1_per_sample,
        l2_per_sample=l2_per_sample,
    )
    if not with_grads:
        return breakdown, None
    return breakdown, {"y_all": d_y_all, "y_uni": d_y_uni, "proj": d_proj}


def compute_losses(trace, labels: dict[str, np.ndarray], y_gt,
                   spec: al.AlignmentSpec, cfg: TrainConfig) -> LossBreakdown:
    """Assemble the three loss terms for one batch (no gradients)."""
    breakdown, _ = _loss_core(trace, labels, y_gt, spec, cfg, with_grads=False)
    return breakdown


def loss_gradients(trace, labels: dict[str, np.ndarray], y_gt,
                   spec: al.AlignmentSpec, cfg: TrainConfig):
    """Loss breakdown plus the upstream gradients for model_backward:
    d(total)/d(y_all), d(total)/d(y_s), and the alignment gradients injected
    on the projected features."""
    return _loss_core(trace, labels, y_gt, spec, cfg, with_grads=True)


@dataclass
class OptState:
    kind: str
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


def init_opt_state(params: dict[str, np.ndarray], cfg: TrainConfig) -> OptState:
    if cfg.optimizer == "sgd":
        return OptState(kind="sgd")
    return OptState(
        kind="adam",
        m={k: np.zeros_like(p) for k, p in params.items()},
        v={k: np.zeros_like(p) for k, p in params.items()},
    )


def optimizer_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
                   state: OptState, cfg: TrainConfig) -> None:
    """One in-place update. Raises NumericError naming the first parameter
    block with non-finite gradient entries."""
    for k in sorted(params):
        if not np.all(np.isfinite(grads[k])):
            raise NumericError(f"non-finite gradient in parameter block {k!r}")
    lr = cfg.learning_rate
    if state.kind == "sgd":
        for k in params:
            params[k] -= lr * grads[k]
        state.step += 1
        return
    state.step += 1
    t = state.step
    bias1 = 1.0 - ADAM_BETA1**t
    bias2 = 1.0 - ADAM_BETA2**t
    for k in params:
        state.m[k] = ADAM_BETA1 * state.m[k] + (1.0 - ADAM_BETA1) * grads[k]
        state.v[k] = ADAM_BETA2 * state.v[k] + (1.0 - ADAM_BETA2) * grads[k] ** 2
        m_hat = state.m[k] / bias1
        v_hat = state.v[k] / bias2
        params[k] -= lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)


def clip_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scale all gradients so their joint L2 norm is at most max_norm.
    Returns the norm before clipping. max_norm <= 0 disables clipping."""
    norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
    if max_norm > 0 and norm > max_norm:
        factor = max_norm / norm
        for g in grads.values():
            g *= factor
    return norm


def _batch_indices(n: int, batch_size: int, rng) -> list[np.ndarray]:
    order = rng.permutation(n)
    chunks = [order[i : i + batch_size] for i in range(0, n, batch_size)]
    # A trailing single-sample batch would break covariance estimation, so
    # fold it into the previous batch when there is one.
    if len(chunks) > 1 and len(chunks[-1]) == 1:
        chunks[-2] = np.concatenate([chunks[-2], chunks[-1]])
        chunks.pop()
    return chunks


def train_epoch(dataset: list[Sample], params: dict[str, np.ndarray], opt_state: OptState,
                label_store: ulgm.LabelStore, cfg: TrainConfig, epoch_index: int,
                dims: md.ModelDims) -> dict:
    """One pass over the dataset: seeded shuffle, per-batch forward /
    losses / backward / optimizer step, then (with label generation on) the
    epoch-end center update and label regeneration from cached features.

    epoch_index is 1-based. Returns the epoch's mean loss terms.
    """
    n = len(dataset)
    spec = cfg.spec()
    rng = np.random.default_rng([cfg.seed, _SHUFFLE_STREAM, epoch_index])
    cached = {
        "all": np.zeros((n, dims.d_all)),
        **{m: np.zeros((n, dims.d_proj)) for m in md.MODALITIES},
    }
    sums = {"l1": 0.0, "l2": 0.0, "l3": 0.0, "total": 0.0}
    batches = _batch_indices(n, cfg.batch_size, rng)
    for indices in batches:
        batch = [dataset[i] for i in indices]
        trace = md.forward_batch(batch_sequences(batch), params, dims)
        labels = label_store.slice(indices)
        breakdown, upstream = loss_gradients(trace, labels, labels_of(batch), spec, cfg)
        grads = md.model_backward(
            params, trace, upstream["y_all"], upstream["y_uni"], upstream["proj"]
        )
        clip_global_norm(grads, cfg.grad_clip)
        optimizer_step(params, grads, opt_state, cfg)
        cached["all"][indices] = trace.fusion.fused
        for m in md.MODALITIES:
            cached[m][indices] = trace.fusion.proj[m]
        for key, value in (("l1", breakdown.l1), ("l2", breakdown.l2),
                           ("l3", breakdown.l3), ("total", breakdown.total)):
            sums[key] += value
    stats = {key: value / len(batches) for key, value in sums.items()}
    stats["epoch"] = epoch_index
    stats["labels_changed"] = 0
    if cfg.ulgm_enabled:
        stats["labels_changed"] = ulgm.regenerate_labels(label_store, cached, cfg.beta())
    return stats


def predict_dataset(dataset: list[Sample], params: dict[str, np.ndarray],
                    dims: md.ModelDims) -> np.ndarray:
    trace = md.forward_batch(batch_sequences(dataset), params, dims)
    return trace.fusion.y_all


def projected_features(dataset: list[Sample], params: dict[str, np.ndarray],
                       dims: md.ModelDims) -> dict[str, np.ndarray]:
    """Per-modality projected features plus the fused features ('all')."""
    trace = md.forward_batch(batch_sequences(dataset), params, dims)
    out = {m: trace.fusion.proj[m] for m in md.MODALITIES}
    out["all"] = trace.fusion.fused
    return out


def alignment_theta(dataset: list[Sample], params: dict[str, np.ndarray],
                    dims: md.ModelDims, pair: tuple[str, str]) -> float:
    """Shared loss between two modalities' projected-feature covariances."""
    feats = projected_features(dataset, params, dims)
    m_a, m_v = feats[pair[0]], feats[pair[1]]
    return al.shared_loss(linalg.covariance(m_a), linalg.covariance(m_v))


@dataclass
class RunResult:
    config: TrainConfig
    dims: md.ModelDims
    params: dict[str, np.ndarray]
    opt_state: OptState
    label_store: ulgm.LabelStore
    history: list[dict]
    final_metrics: dict[str, MetricsReport]


def run_training(train: list[Sample], cfg: TrainConfig,
                 eval_sets: dict[str, list[Sample]] | None = None) -> RunResult:
    """Train from scratch on ``train`` and evaluate on each named split."""
    cfg.validate()
    in_t, in_a, in_v = check_uniform_step_dims(train)
    dims = md.ModelDims(in_t=in_t, in_a=in_a, in_v=in_v, d_t=cfg.d_t, d_a=cfg.d_a,
                        d_v=cfg.d_v, d_all=cfg.d_all, d_proj=cfg.d_proj)
    params = md.init_params(dims, seed=cfg.seed)
    opt_state = init_opt_state(params, cfg)
    label_store = ulgm.LabelStore(
        labels_of(train), ids=[s.id for s in train],
        label_min=cfg.label_min, label_max=cfg.label_max,
    )
    history = []
    for epoch in range(1, cfg.epochs + 1):
        history.append(train_epoch(train, params, opt_state, label_store, cfg, epoch, dims))
    final_metrics = {}
    splits = {"train": train, **(eval_sets or {})}
    for name, split in splits.items():
        if split:
            final_metrics[name] = evaluate_predictions(
                predict_dataset(split, params, dims), labels_of(split)
            )
    return RunResult(config=cfg, dims=dims, params=params, opt_state=opt_state,
                     label_store=label_store, history=history, final_metrics=final_metrics)


def checkpoint_dict(result: RunResult) -> dict:
    payload = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "config": result.config.to_dict(),
        "epoch": len(result.history),
        "dims": dataclasses.asdict(result.dims),
        "params": {k: v.tolist() for k, v in result.params.items()},
        "opt_state": {
            "kind": result.opt_state.kind,
            "step": result.opt_state.step,
            "m": {k: v.tolist() for k, v in result.opt_state.m.items()},
            "v": {k: v.tolist() for k, v in result.opt_state.v.items()},
        },
        "label_store": result.label_store.to_dict(),
    }
    return payload


def load_checkpoint(payload: dict) -> tuple[TrainConfig, md.ModelDims, dict, OptState, ulgm.LabelStore]:
    cfg = TrainConfig.from_dict(payload["config"])
    dims = md.ModelDims(**payload["dims"])
    params = {k: np.asarray(v, dtype=np.float64) for k, v in payload["params"].items()}
    opt = payload["opt_state"]
    opt_state = OptState(
        kind=opt["kind"],
        step=opt["step"],
        m={k: np.asarray(v, dtype=np.float64) for k, v in opt["m"].items()},
        v={k: np.asarray(v, dtype=np.float64) for k, v in opt["v"].items()},
    )
    label_store = ulgm.LabelStore.from_dict(payload["label_store"])
    return cfg, dims, params, opt_state, label_store


# --- gradient-check harness ---------------------------------------------

GRADCHECK_TOLERANCES = {
    "alignment": 1e-6,
    "text_encoder": 1e-6,
    "lstm_encoder": 1e-5,
    "fusion_heads": 1e-5,
    "full_objective": 1e-4,
}


def _gradcheck_alignment(seed: int) -> float:
    rng = np.random.default_rng([seed, 1])
    worst = 0.0
    for _ in range(20):
        n_a = int(rng.integers(2, 9))
        n_v = int(rng.integers(2, 9))
        d = int(rng.integers(1, 7))
        m_a = rng.normal(size=(n_a, d))
        m_v = rng.normal(size=(n_v, d))
        g_a, g_v = al.shared_loss_grad(m_a, m_v)

        def theta_a(x):
            return al.shared_loss(linalg.covariance(x), linalg.covariance(m_v))

        def theta_v(x):
            return al.shared_loss(linalg.covariance(m_a), linalg.covariance(x))

        worst = max(worst, max_rel_err(g_a, central_difference(theta_a, m_a)))
        worst = max(worst, max_rel_err(g_v, central_difference(theta_v, m_v)))
    return worst


def _gradcheck_text(seed: int) -> float:
    rng = np.random.default_rng([seed, 2])
    worst = 0.0
    for _ in range(5):
        w = rng.normal(size=(3, 2))
        b = rng.normal(size=2)
        seqs = [rng.normal(size=(int(rng.integers(1, 4)), 3)) for _ in range(3)]
        probe = rng.normal(size=(3, 2))
        _, cache = md.text_encode(seqs, w, b)
        d_w, d_b, _ = md.text_backward(cache, probe, w)

        def run(w_, b_):
            out, _ = md.text_encode(seqs, w_, b_)
            return float(np.sum(out * probe))

        worst = max(worst, max_rel_err(d_w, central_difference(lambda v: run(v, b), w)))
        worst = max(worst, max_rel_err(d_b, central_difference(lambda v: run(w, v), b)))
    return worst


def _gradcheck_lstm(seed: int) -> float:
    rng = np.random.default_rng([seed, 3])
    worst = 0.0
    for _ in range(5):
        d_in, h_dim, length = 2, 3, 3
        w_x = rng.normal(size=(d_in, 4 * h_dim)) * 0.5
        w_h = rng.normal(size=(h_dim, 4 * h_dim)) * 0.5
        b = rng.normal(size=4 * h_dim) * 0.5
        x = rng.normal(size=(2, length, d_in))
        probe = rng.normal(size=(2, h_dim))
        _, cache = md.lstm_encode(x, w_x, w_h, b)
        d_wx, d_wh, d_b, d_x = md.lstm_backward(cache, probe, w_x, w_h)

        def run(wx_, wh_, b_, x_):
            h, _ = md.lstm_encode(x_, wx_, wh_, b_)
            return float(np.sum(h * probe))

        worst = max(worst, max_rel_err(d_wx, central_difference(lambda v: run(v, w_h, b, x), w_x)))
        worst = max(worst, max_rel_err(d_wh, central_difference(lambda v: run(w_x, v, b, x), w_h)))
        worst = max(worst, max_rel_err(d_b, central_difference(lambda v: run(w_x, w_h, v, x), b)))
        worst = max(worst, max_rel_err(d_x, central_difference(lambda v: run(w_x, w_h, b, v), x)))
    return worst


def _tiny_setup(seed: int):
    rng = np.random.default_rng([seed, 4])
    dims = md.ModelDims(in_t=2, in_a=2, in_v=2, d_t=3, d_a=3, d_v=3, d_all=4, d_proj=4)
    params = md.init_params(dims, seed=seed)
    n = 3
    seqs = {
        "t": [rng.normal(size=(2, 2)) for _ in range(n)],
        "a": [rng.normal(size=(3, 2)) for _ in range(n)],
        "v": [rng.normal(size=(2, 2)) for _ in range(n)],
    }
    return rng, dims, params, n, seqs


def _gradcheck_fusion(seed: int) -> float:
    rng, dims, params, n, seqs = _tiny_setup(seed)
    up_all = rng.normal(size=n)
    up_uni = {m: rng.normal(size=n) for m in md.MODALITIES}
    up_proj = {m: rng.normal(size=(n, dims.d_proj)) for m in md.MODALITIES}
    trace = md.forward_batch(seqs, params, dims)
    grads = md.model_backward(params, trace, up_all, up_uni, up_proj)

    def scalar(vec):
        p = md.unpack_params(vec, params)
        tr = md.forward_batch(seqs, p, dims)
        total = float(np.sum(tr.fusion.y_all * up_all))
        for m in md.MODALITIES:
            total += float(np.sum(tr.fusion.y_uni[m] * up_uni[m]))
            total += float(np.sum(tr.fusion.proj[m] * up_proj[m]))
        return total

    numeric = central_difference(scalar, md.pack_params(params))
    return max_rel_err(md.pack_params(grads), numeric)


def _gradcheck_full(seed: int) -> float:
    rng, dims, params, n, seqs = _tiny_setup(seed)
    y_gt = rng.normal(size=n)
    # frozen generated labels, deliberately away from the ground truth
    labels = {m: y_gt + rng.normal(size=n) for m in md.MODALITIES}
    cfg = TrainConfig(alignment_spec="V-A/T+A", d_t=3, d_a=3, d_v=3, d_all=4, d_proj=4,
                      private_cap=10.0)
    spec = cfg.spec()

    trace = md.forward_batch(seqs, params, dims)
    _, upstream = loss_gradients(trace, labels, y_gt, spec, cfg)
    grads = md.model_backward(params, trace, upstream["y_all"], upstream["y_uni"],
                              upstream["proj"])

    def total_loss(vec):
        p = md.unpack_params(vec, params)
        tr = md.forward_batch(seqs, p, dims)
        return compute_losses(tr, labels, y_gt, spec, cfg).total

    numeric = central_difference(total_loss, md.pack_params(params))
    return max_rel_err(md.pack_params(grads), numeric)


def gradcheck(cfg: TrainConfig | None = None, tolerance: float | None = None,
              seed: int | None = None) -> dict:
    """Compare every analytic gradient path against central finite
    differences on seeded tiny instances.

    Returns {"blocks": {name: {"max_rel_err", "tolerance", "passed"}},
    "passed": bool}. ``tolerance`` overrides every per-block default.
    """
    seed = (cfg.seed if cfg is not None else 0) if seed is None else seed
    runners = {
        "alignment": _gradcheck_alignment,
        "text_encoder": _gradcheck_text,
        "lstm_encoder": _gradcheck_lstm,
        "fusion_heads": _gradcheck_fusion,
        "full_objective": _gradcheck_full,
    }
    blocks = {}
    for name, runner in runners.items():
        err = runner(seed)
        tol = tolerance if tolerance is not None else GRADCHECK_TOLERANCES[name]
        blocks[name] = {"max_rel_err": err, "tolerance": tol, "passed": bool(err < tol)}
    return {"blocks": blocks, "passed": all(b["passed"] for b in blocks.values())}
