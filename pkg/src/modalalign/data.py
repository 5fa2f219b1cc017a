"""Synthetic multimodal datasets with planted structure, JSONL ingestion,
and deterministic splitting.

The generator draws one shared latent per sample plus a private latent per
modality, mixes them through fixed random linear maps into each modality's
step sequence (Gaussian latents, linear mixing: the planted shared signal is
purely second-order), and writes the label as a linear read-out of the
latents. Per-sample rng streams are derived from (seed, sample index) so
generation is order-independent.

JSONL schema (version 1), one object per line:
    {"id": ..., "label": float, "text": [[...]], "audio": [[...]], "vision": [[...]]}
with each modality a step-major matrix.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields

import numpy as np

from .errors import ConfigError, DataError

JSONL_SCHEMA_VERSION = 1

_MAPS_STREAM = 23
_SAMPLE_STREAM = 29
_SPLIT_STREAM = 31

_MODALITY_KEYS = ("text", "audio", "vision")


@dataclass
class Sample:
    id: int | str
    text: np.ndarray  # (L_t, step_dim_t)
    audio: np.ndarray
    vision: np.ndarray
    label: float

    def sequences(self) -> dict[str, np.ndarray]:
        return {"t": self.text, "a": self.audio, "v": self.vision}


@dataclass
class SynthConfig:
    """Knobs for the planted-structure generator.

    Tuples are ordered (text, audio, vision). ``shared_mix`` and
    ``private_mix`` scale how strongly each modality's sequence mixes in the
    shared and private latents; ``shared_strength`` / ``private_strengths``
    scale how strongly the latents drive the label.
    """

    n_samples: int = 200
    shared_dim: int = 4
    private_dims: tuple[int, int, int] = (2, 2, 2)
    seq_lens: tuple[int, int, int] = (4, 6, 6)
    step_dims: tuple[int, int, int] = (8, 6, 6)
    shared_mix: tuple[float, float, float] = (1.0, 1.0, 1.0)
    private_mix: tuple[float, float, float] = (1.0, 1.0, 1.0)
    shared_strength: float = 1.0
    private_strengths: tuple[float, float, float] = (0.0, 0.0, 0.0)
    noise: float = 0.1
    label_min: float = -3.0
    label_max: float = 3.0
    seed: int = 0

    def validate(self) -> "SynthConfig":
        if self.n_samples < 1:
            raise ConfigError(f"n_samples must be >= 1, got {self.n_samples}")
        if self.shared_dim < 1 or any(d < 1 for d in self.private_dims):
            raise ConfigError("latent dims must be >= 1")
        if any(l < 1 for l in self.seq_lens) or any(d < 1 for d in self.step_dims):
            raise ConfigError("sequence lengths and step dims must be >= 1")
        if self.noise < 0 or self.shared_strength < 0 or any(s < 0 for s in self.private_strengths):
            raise ConfigError("strengths and noise must be >= 0")
        if self.label_min >= self.label_max:
            raise ConfigError(f"empty label range [{self.label_min}, {self.label_max}]")
        return self

    @classmethod
    def from_dict(cls, payload: dict) -> "SynthConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(payload) - known
        if unknown:
            raise ConfigError(f"unknown SynthConfig keys: {sorted(unknown)}")
        payload = {
            k: tuple(v) if isinstance(v, list) else v for k, v in payload.items()
        }
        return cls(**payload).validate()


@dataclass
class _Mixing:
    step_maps: dict[str, list[np.ndarray]]  # modality -> per-step (step_dim, k + q_m)
    label_shared: np.ndarray  # unit vector, shared latent read-out
    label_private: dict[str, np.ndarray]  # unit vectors per modality


def _unit(rng, dim) -> np.ndarray:
    v = rng.normal(size=dim)
    return v / np.linalg.norm(v)


def _draw_mixing(cfg: SynthConfig) -> _Mixing:
    rng = np.random.default_rng([cfg.seed, _MAPS_STREAM])
    step_maps: dict[str, list[np.ndarray]] = {}
    label_private: dict[str, np.ndarray] = {}
    for idx, key in enumerate(_MODALITY_KEYS):
        k, q = cfg.shared_dim, cfg.private_dims[idx]
        maps = []
        for _ in range(cfg.seq_lens[idx]):
            shared_part = rng.normal(size=(cfg.step_dims[idx], k)) / np.sqrt(k)
            private_part = rng.normal(size=(cfg.step_dims[idx], q)) / np.sqrt(q)
            maps.append(np.hstack([cfg.shared_mix[idx] * shared_part,
                                   cfg.private_mix[idx] * private_part]))
        step_maps[key] = maps
        label_private[key] = _unit(rng, q)
    return _Mixing(step_maps=step_maps, label_shared=_unit(rng, cfg.shared_dim),
                   label_private=label_private)


def gen_synthetic(cfg: SynthConfig, with_latents: bool = False):
    """Generate a dataset; deterministic for a given config.

    With ``with_latents=True`` also returns the per-sample latents
    (``shared`` (n, k) and one array per modality) for oracle checks.
    """
    cfg.validate()
    mixing = _draw_mixing(cfg)
    samples: list[Sample] = []
    shared = np.empty((cfg.n_samples, cfg.shared_dim))
    privates = {key: np.empty((cfg.n_samples, cfg.private_dims[i]))
                for i, key in enumerate(_MODALITY_KEYS)}
    for i in range(cfg.n_samples):
        rng = np.random.default_rng([cfg.seed, _SAMPLE_STREAM, i])
        z = rng.normal(size=cfg.shared_dim)
        shared[i] = z
        seqs = {}
        label = cfg.shared_strength * float(mixing.label_shared @ z)
        for idx, key in enumerate(_MODALITY_KEYS):
            p = rng.normal(size=cfg.private_dims[idx])
            privates[key][i] = p
            latent = np.concatenate([z, p])
            steps = [
                m @ latent + cfg.noise * rng.normal(size=cfg.step_dims[idx])
                for m in mixing.step_maps[key]
            ]
            seqs[key] = np.stack(steps)
            label += cfg.private_strengths[idx] * float(mixing.label_private[key] @ p)
        label += cfg.noise * float(rng.normal())
        label = float(np.clip(label, cfg.label_min, cfg.label_max))
        samples.append(Sample(id=i, text=seqs["text"], audio=seqs["audio"],
                              vision=seqs["vision"], label=label))
    if with_latents:
        return samples, {"shared": shared, **privates}
    return samples


def _matrix_from_json(value, key: str, line: int) -> np.ndarray:
    try:
        arr = np.asarray(value, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise DataError(f"{key!r} is not a numeric matrix: {exc}", line=line) from None
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise DataError(f"{key!r} must be a non-empty 2-D matrix, got shape {arr.shape}",
                        line=line)
    if not np.all(np.isfinite(arr)):
        raise DataError(f"{key!r} contains non-finite values", line=line)
    return arr


def load_jsonl(path, label_min: float = -3.0, label_max: float = 3.0) -> list[Sample]:
    """Load pre-extracted features; errors carry the 1-based line number."""
    samples: list[Sample] = []
    with open(path, "r", encoding="utf-8") as handle:
        for line_no, raw in enumerate(handle, start=1):
            if not raw.strip():
                continue
            try:
                record = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise DataError(f"invalid JSON: {exc.msg}", line=line_no) from None
            if not isinstance(record, dict):
                raise DataError("record is not an object", line=line_no)
            missing = [k for k in ("id", "label", *_MODALITY_KEYS) if k not in record]
            if missing:
                raise DataError(f"missing keys {missing}", line=line_no)
            label = record["label"]
            if not isinstance(label, (int, float)) or isinstance(label, bool):
                raise DataError(f"label {label!r} is not numeric", line=line_no)
            if not (label_min <= label <= label_max):
                raise DataError(
                    f"label {label} outside the configured range [{label_min}, {label_max}]",
                    line=line_no,
                )
            matrices = {k: _matrix_from_json(record[k], k, line_no) for k in _MODALITY_KEYS}
            samples.append(Sample(id=record["id"], text=matrices["text"],
                                  audio=matrices["audio"], vision=matrices["vision"],
                                  label=float(label)))
    return samples


def save_jsonl(samples: list[Sample], path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for s in samples:
            record = {
                "id": s.id,
                "label": s.label,
                "text": s.text.tolist(),
                "audio": s.audio.tolist(),
                "vision": s.vision.tolist(),
            }
            handle.write(json.dumps(record, sort_keys=True) + "\n")


def split_dataset(samples: list[Sample], fractions=(0.7, 0.1, 0.2),
                  seed: int = 0) -> tuple[list[Sample], list[Sample], list[Sample]]:
    """Seeded disjoint (train, valid, test) partition."""
    if len(fractions) != 3:
        raise ConfigError(f"expected 3 fractions, got {len(fractions)}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigError(f"fractions {fractions} do not sum to 1")
    n = len(samples)
    order = np.random.default_rng([seed, _SPLIT_STREAM]).permutation(n)
    n_train = int(np.floor(n * fractions[0]))
    n_valid = int(np.floor(n * fractions[1]))
    train = [samples[i] for i in order[:n_train]]
    valid = [samples[i] for i in order[n_train : n_train + n_valid]]
    test = [samples[i] for i in order[n_train + n_valid :]]
    return train, valid, test


def batch_sequences(samples: list[Sample]) -> dict[str, list[np.ndarray]]:
    """Regroup samples into the per-modality sequence lists the model expects."""
    return {
        "t": [s.text for s in samples],
        "a": [s.audio for s in samples],
        "v": [s.vision for s in samples],
    }


def labels_of(samples: list[Sample]) -> np.ndarray:
    return np.array([s.label for s in samples], dtype=np.float64)


def check_uniform_step_dims(samples: list[Sample]) -> tuple[int, int, int]:
    """All samples must agree on each modality's per-step width."""
    if not samples:
        raise DataError("dataset is empty")
    dims = (samples[0].text.shape[1], samples[0].audio.shape[1], samples[0].vision.shape[1])
    for s in samples:
        got = (s.text.shape[1], s.audio.shape[1], s.vision.shape[1])
        if got != dims:
            raise DataError(
                f"sample {s.id!r} has step dims {got}, expected {dims}"
            )
    return dims
