"""Forward and backward passes of the multimodal network, written by hand.

Text is encoded by a mean-pooled linear map followed by tanh (a deliberately
small stand-in that keeps the sequence-in / fixed-vector-out interface of a
pretrained language model). Audio and vision are encoded by a single-layer
unidirectional LSTM cell whose last hidden state is the feature. The three
features are concatenated and projected (ReLU) for the multimodal prediction
head; each modality is also projected separately (ReLU, common width) for the
per-modality heads and for covariance alignment.

Every operation caches what its adjoint needs, and the adjoints are verified
against central finite differences in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .validation import check_finite

MODALITIES = ("t", "a", "v")

_INIT_STREAM = 11  # rng stream tag for parameter initialization

# Gate order in the stacked LSTM weight blocks.
_GATES = ("i", "f", "g", "o")


@dataclass(frozen=True)
class ModelDims:
    """Input step widths and layer widths. d_proj is shared by the three
    per-modality projections so their covariances are comparable."""

    in_t: int
    in_a: int
    in_v: int
    d_t: int = 16
    d_a: int = 16
    d_v: int = 16
    d_all: int = 32
    d_proj: int = 32

    def encoder_width(self, m: str) -> int:
        return {"t": self.d_t, "a": self.d_a, "v": self.d_v}[m]

    def input_width(self, m: str) -> int:
        return {"t": self.in_t, "a": self.in_a, "v": self.in_v}[m]


def _uniform(rng, fan_in: int, shape) -> np.ndarray:
    r = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-r, r, size=shape)


def init_params(dims: ModelDims, seed: int = 0) -> dict[str, np.ndarray]:
    """Seeded uniform(-1/sqrt(fan_in), +) initialization; LSTM forget-gate
    biases start at 1.0."""
    rng = np.random.default_rng([seed, _INIT_STREAM])
    p: dict[str, np.ndarray] = {}
    p["text.W"] = _uniform(rng, dims.in_t, (dims.in_t, dims.d_t))
    p["text.b"] = _uniform(rng, dims.in_t, (dims.d_t,))
    for name, m in (("audio", "a"), ("vision", "v")):
        d_in, h = dims.input_width(m), dims.encoder_width(m)
        p[f"{name}.Wx"] = _uniform(rng, d_in, (d_in, 4 * h))
        p[f"{name}.Wh"] = _uniform(rng, h, (h, 4 * h))
        b = _uniform(rng, h, (4 * h,))
        b[h : 2 * h] = 1.0
        p[f"{name}.b"] = b
    d_cat = dims.d_t + dims.d_a + dims.d_v
    p["fuse.W"] = _uniform(rng, d_cat, (d_cat, dims.d_all))
    p["fuse.b"] = _uniform(rng, d_cat, (dims.d_all,))
    p["fuse.head_w"] = _uniform(rng, dims.d_all, (dims.d_all,))
    p["fuse.head_b"] = _uniform(rng, dims.d_all, ())
    for m in MODALITIES:
        d_s = dims.encoder_width(m)
        p[f"proj_{m}.W"] = _uniform(rng, d_s, (d_s, dims.d_proj))
        p[f"proj_{m}.b"] = _uniform(rng, d_s, (dims.d_proj,))
        p[f"head_{m}.w"] = _uniform(rng, dims.d_proj, (dims.d_proj,))
        p[f"head_{m}.b"] = _uniform(rng, dims.d_proj, ())
    return p


def param_count(dims: ModelDims) -> int:
    """Closed-form trainable parameter count for the configured widths."""
    count = dims.in_t * dims.d_t + dims.d_t
    for m in ("a", "v"):
        d_in, h = dims.input_width(m), dims.encoder_width(m)
        count += 4 * h * (d_in + h + 1)
    d_cat = dims.d_t + dims.d_a + dims.d_v
    count += d_cat * dims.d_all + dims.d_all  # fused projection
    count += dims.d_all + 1  # multimodal head
    for m in MODALITIES:
        count += dims.encoder_width(m) * dims.d_proj + dims.d_proj
        count += dims.d_proj + 1
    return count


def zeros_like_params(params: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    return {k: np.zeros_like(v) for k, v in params.items()}


def add_into(acc: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
    for k, g in grads.items():
        acc[k] += g


def pack_params(params: dict[str, np.ndarray]) -> np.ndarray:
    """Flatten to one vector in sorted-key order (inverse: unpack_params)."""
    return np.concatenate([params[k].reshape(-1) for k in sorted(params)])


def unpack_params(vec: np.ndarray, template: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    out = {}
    offset = 0
    for k in sorted(template):
        size = template[k].size
        out[k] = vec[offset : offset + size].reshape(template[k].shape).copy()
        offset += size
    if offset != vec.size:
        raise ShapeError(f"vector length {vec.size} does not match template ({offset})")
    return out


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


@dataclass
class LstmCache:
    x: np.ndarray  # (N, L, d_in)
    gates: dict  # each (N, L, H), keys i/f/g/o
    c: np.ndarray  # (N, L, H) post-update cell states
    h: np.ndarray  # (N, L, H) hidden states


def lstm_encode(x: np.ndarray, w_x: np.ndarray, w_h: np.ndarray,
                b: np.ndarray) -> tuple[np.ndarray, LstmCache]:
    """Run the LSTM cell over a batch of equal-length sequences.

    x is (N, L, d_in); returns the last hidden state (N, H) and the cache
    consumed by lstm_backward. Initial hidden and cell states are zero.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3:
        raise ShapeError(f"lstm_encode expects (N, L, d_in) input, got shape {x.shape}")
    n, length, d_in = x.shape
    if w_x.shape[0] != d_in:
        raise ShapeError(f"input width {d_in} does not match weights {w_x.shape}")
    h_dim = w_h.shape[0]
    gates = {k: np.empty((n, length, h_dim)) for k in _GATES}
    cs = np.empty((n, length, h_dim))
    hs = np.empty((n, length, h_dim))
    h = np.zeros((n, h_dim))
    c = np.zeros((n, h_dim))
    for t in range(length):
        z = x[:, t, :] @ w_x + h @ w_h + b
        i = _sigmoid(z[:, :h_dim])
        f = _sigmoid(z[:, h_dim : 2 * h_dim])
        g = np.tanh(z[:, 2 * h_dim : 3 * h_dim])
        o = _sigmoid(z[:, 3 * h_dim :])
        c = f * c + i * g
        h = o * np.tanh(c)
        gates["i"][:, t] = i
        gates["f"][:, t] = f
        gates["g"][:, t] = g
        gates["o"][:, t] = o
        cs[:, t] = c
        hs[:, t] = h
    return h, LstmCache(x=x, gates=gates, c=cs, h=hs)


def lstm_backward(cache: LstmCache, d_h_last: np.ndarray, w_x: np.ndarray,
                  w_h: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Backpropagate d(feature) through the recurrence.

    Returns (d_w_x, d_w_h, d_b, d_x) for the cached batch.
    """
    x, gates, cs = cache.x, cache.gates, cache.c
    n, length, _ = x.shape
    h_dim = w_h.shape[0]
    d_wx = np.zeros_like(w_x)
    d_wh = np.zeros_like(w_h)
    d_b = np.zeros(4 * h_dim)
    d_x = np.zeros_like(x)
    dh = np.asarray(d_h_last, dtype=np.float64).copy()
    dc = np.zeros((n, h_dim))
    for t in range(length - 1, -1, -1):
        i, f, g, o = (gates[k][:, t] for k in _GATES)
        c_prev = cs[:, t - 1] if t > 0 else np.zeros((n, h_dim))
        h_prev = cache.h[:, t - 1] if t > 0 else np.zeros((n, h_dim))
        tc = np.tanh(cs[:, t])
        do = dh * tc
        dc = dc + dh * o * (1.0 - tc * tc)
        di = dc * g
        df = dc * c_prev
        dg = dc * i
        dz = np.concatenate(
            [
                di * i * (1.0 - i),
                df * f * (1.0 - f),
                dg * (1.0 - g * g),
                do * o * (1.0 - o),
            ],
            axis=1,
        )
        d_wx += x[:, t, :].T @ dz
        d_wh += h_prev.T @ dz
        d_b += dz.sum(axis=0)
        d_x[:, t, :] = dz @ w_x.T
        dh = dz @ w_h.T
        dc = dc * f
    return d_wx, d_wh, d_b, d_x


@dataclass
class TextCache:
    means: np.ndarray  # (N, d_in)
    lengths: np.ndarray  # (N,)
    out: np.ndarray  # (N, d_t)


def text_encode(seqs, w: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, TextCache]:
    """Mean over steps, then linear map and tanh.

    Accepts a list of (L_i, d_in) arrays (lengths may differ) or a single
    (N, L, d_in) array.
    """
    if isinstance(seqs, np.ndarray) and seqs.ndim == 3:
        seqs = list(seqs)
    means = np.stack([np.asarray(s, dtype=np.float64).mean(axis=0) for s in seqs])
    if means.shape[1] != w.shape[0]:
        raise ShapeError(f"step width {means.shape[1]} does not match weights {w.shape}")
    lengths = np.array([len(s) for s in seqs])
    out = np.tanh(means @ w + b)
    return out, TextCache(means=means, lengths=lengths, out=out)


def text_backward(cache: TextCache, d_out: np.ndarray,
                  w: np.ndarray) -> tuple[np.ndarray, np.ndarray, list[np.ndarray]]:
    """Returns (d_w, d_b, per-sequence input gradients)."""
    dz = np.asarray(d_out) * (1.0 - cache.out * cache.out)
    d_w = cache.means.T @ dz
    d_b = dz.sum(axis=0)
    d_means = dz @ w.T
    d_seqs = [
        np.tile(d_means[idx] / cache.lengths[idx], (cache.lengths[idx], 1))
        for idx in range(len(cache.lengths))
    ]
    return d_w, d_b, d_seqs


@dataclass
class EncoderCaches:
    text: TextCache
    lstm_groups: dict[str, list[tuple[np.ndarray, LstmCache]]]  # modality -> [(indices, cache)]


def encode_features(seqs: dict[str, list[np.ndarray]], params: dict[str, np.ndarray],
                    dims: ModelDims) -> tuple[dict[str, np.ndarray], EncoderCaches]:
    """Encode a batch of per-modality sequence lists into feature matrices.

    LSTM inputs are grouped by sequence length so each group runs as one
    vectorized recurrence; results are reassembled in input order.
    """
    n = len(seqs["t"])
    f_t, text_cache = text_encode(seqs["t"], params["text.W"], params["text.b"])
    features = {"t": f_t}
    lstm_groups: dict[str, list[tuple[np.ndarray, LstmCache]]] = {}
    for name, m in (("audio", "a"), ("vision", "v")):
        by_len: dict[int, list[int]] = {}
        for idx, s in enumerate(seqs[m]):
            by_len.setdefault(len(s), []).append(idx)
        out = np.empty((n, dims.encoder_width(m)))
        groups = []
        for length in sorted(by_len):
            indices = np.array(by_len[length])
            x = np.stack([np.asarray(seqs[m][i], dtype=np.float64) for i in indices])
            h, cache = lstm_encode(x, params[f"{name}.Wx"], params[f"{name}.Wh"], params[f"{name}.b"])
            out[indices] = h
            groups.append((indices, cache))
        features[m] = out
        lstm_groups[m] = groups
    return features, EncoderCaches(text=text_cache, lstm_groups=lstm_groups)


@dataclass
class FusionTrace:
    """Everything the fusion/projection/prediction adjoint needs."""

    features: dict[str, np.ndarray]  # encoder outputs, (N, d_s)
    concat: np.ndarray  # (N, d_t + d_a + d_v)
    fused_pre: np.ndarray  # (N, d_all) pre-ReLU
    fused: np.ndarray  # (N, d_all)
    proj_pre: dict[str, np.ndarray]  # (N, d_proj) pre-ReLU
    proj: dict[str, np.ndarray]  # (N, d_proj)
    y_all: np.ndarray  # (N,)
    y_uni: dict[str, np.ndarray]  # (N,)


def fuse_and_predict(features: dict[str, np.ndarray],
                     params: dict[str, np.ndarray]) -> FusionTrace:
    """Concatenate modality features, project with ReLU, and run the
    multimodal and per-modality prediction heads."""
    for m in MODALITIES:
        expected = params[f"proj_{m}.W"].shape[0]
        if features[m].shape[1] != expected:
            raise ShapeError(
                f"feature width {features[m].shape[1]} for modality {m!r} "
                f"does not match projection {params[f'proj_{m}.W'].shape}"
            )
    concat = np.concatenate([features[m] for m in MODALITIES], axis=1)
    fused_pre = concat @ params["fuse.W"] + params["fuse.b"]
    fused = np.maximum(fused_pre, 0.0)
    y_all = fused @ params["fuse.head_w"] + params["fuse.head_b"]
    proj_pre = {}
    proj = {}
    y_uni = {}
    for m in MODALITIES:
        pre = features[m] @ params[f"proj_{m}.W"] + params[f"proj_{m}.b"]
        post = np.maximum(pre, 0.0)
        proj_pre[m] = pre
        proj[m] = post
        y_uni[m] = post @ params[f"head_{m}.w"] + params[f"head_{m}.b"]
    return FusionTrace(
        features=dict(features),
        concat=concat,
        fused_pre=fused_pre,
        fused=fused,
        proj_pre=proj_pre,
        proj=proj,
        y_all=y_all,
        y_uni=y_uni,
    )


@dataclass
class ForwardTrace:
    fusion: FusionTrace
    encoders: EncoderCaches
    n: int


def forward_batch(seqs: dict[str, list[np.ndarray]], params: dict[str, np.ndarray],
                  dims: ModelDims) -> ForwardTrace:
    features, caches = encode_features(seqs, params, dims)
    fusion = fuse_and_predict(features, params)
    check_finite(fusion.y_all, "predictions")
    return ForwardTrace(fusion=fusion, encoders=caches, n=len(seqs["t"]))


def fusion_backward(params: dict[str, np.ndarray], trace: FusionTrace,
                    d_y_all: np.ndarray, d_y_uni: dict[str, np.ndarray],
                    d_proj: dict[str, np.ndarray] | None = None,
                    ) -> tuple[dict[str, np.ndarray], dict[str, np.ndarray]]:
    """Adjoint of fuse_and_predict.

    d_proj carries gradients injected directly on the projected features
    (the alignment losses attach there). Returns (parameter grads,
    gradients w.r.t. the encoder features).
    """
    n = trace.concat.shape[0]
    grads: dict[str, np.ndarray] = {}
    d_y_all = np.asarray(d_y_all, dtype=np.float64)
    grads["fuse.head_w"] = trace.fused.T @ d_y_all
    grads["fuse.head_b"] = np.asarray(d_y_all.sum())
    d_fused = np.outer(d_y_all, params["fuse.head_w"])
    d_fused_pre = d_fused * (trace.fused_pre > 0.0)
    grads["fuse.W"] = trace.concat.T @ d_fused_pre
    grads["fuse.b"] = d_fused_pre.sum(axis=0)
    d_concat = d_fused_pre @ params["fuse.W"].T

    d_features: dict[str, np.ndarray] = {}
    offset = 0
    for m in MODALITIES:
        width = trace.features[m].shape[1]
        d_features[m] = d_concat[:, offset : offset + width].copy()
        offset += width

    for m in MODALITIES:
        d_ys = np.asarray(d_y_uni[m], dtype=np.float64) if d_y_uni else np.zeros(n)
        grads[f"head_{m}.w"] = trace.proj[m].T @ d_ys
        grads[f"head_{m}.b"] = np.asarray(d_ys.sum())
        d_p = np.outer(d_ys, params[f"head_{m}.w"])
        if d_proj is not None and m in d_proj:
            d_p = d_p + d_proj[m]
        d_p_pre = d_p * (trace.proj_pre[m] > 0.0)
        grads[f"proj_{m}.W"] = trace.features[m].T @ d_p_pre
        grads[f"proj_{m}.b"] = d_p_pre.sum(axis=0)
        d_features[m] += d_p_pre @ params[f"proj_{m}.W"].T
    return grads, d_features


def model_backward(params: dict[str, np.ndarray], trace: ForwardTrace,
                   d_y_all: np.ndarray, d_y_uni: dict[str, np.ndarray],
                   d_proj: dict[str, np.ndarray] | None = None) -> dict[str, np.ndarray]:
    """Full adjoint: accumulate the three upstream sources (multimodal head,
    per-modality heads, projected-feature injections) into one gradient
    bundle covering every parameter, encoders included."""
    grads = zeros_like_params(params)
    head_grads, d_features = fusion_backward(params, trace.fusion, d_y_all, d_y_uni, d_proj)
    add_into(grads, head_grads)

    d_w, d_b, _ = text_backward(trace.encoders.text, d_features["t"], params["text.W"])
    grads["text.W"] += d_w
    grads["text.b"] += d_b

    for name, m in (("audio", "a"), ("vision", "v")):
        for indices, cache in trace.encoders.lstm_groups[m]:
            d_wx, d_wh, d_bias, _ = lstm_backward(
                cache, d_features[m][indices], params[f"{name}.Wx"], params[f"{name}.Wh"]
            )
            grads[f"{name}.Wx"] += d_wx
            grads[f"{name}.Wh"] += d_wh
            grads[f"{name}.b"] += d_bias
    return grads
