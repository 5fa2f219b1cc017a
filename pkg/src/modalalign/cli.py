"""Experiment runner and verification front end.

Subcommands:
  train   --config cfg.json --data gen:<synth.json>|jsonl:<path>
          [--out DIR] [--seed N] [--spec-sweep "V-A,T-A,..."]
  verify  {gradcheck,optimal-map,ulgm} [--seed N]

Exit codes: 0 success, 1 failed verification check, 2 configuration error,
3 data error, 4 numeric abort. Every failure prints one machine-parsable
line to stderr: "error: <category>: <message>".

The default output directory is ./runs/<timestamp>-<seed>; the environment
variable MODALALIGN_OUT overrides the ./runs base. Each run writes
manifest.json, metrics.txt and checkpoint.json.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import subprocess
import sys
import time
from pathlib import Path

from .data import SynthConfig, gen_synthetic, labels_of, load_jsonl, split_dataset
from .errors import (
    ConfigError,
    DataError,
    DegenerateBatchError,
    ModalAlignError,
    NotPSDError,
    NumericError,
    ShapeError,
    SpecParseError,
)
from .metrics import format_table
from .training import TrainConfig, checkpoint_dict, gradcheck, run_training
from .verification import verify_optimal_map, verify_ulgm

MANIFEST_FORMAT_VERSION = 1

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

SPLIT_FRACTIONS = (0.7, 0.1, 0.2)

_CONFIG_ERRORS = (ConfigError, SpecParseError)
_DATA_ERRORS = (DataError, DegenerateBatchError)
_NUMERIC_ERRORS = (NumericError, NotPSDError, ShapeError)


def _fail(category: str, message: str) -> int:
    message = " ".join(str(message).split())  # keep it single-line
    print(f"error: {category}: {message}", file=sys.stderr)
    return {"config": EXIT_CONFIG, "data": EXIT_DATA, "numeric": EXIT_NUMERIC}[category]


def _source_revision() -> str:
    try:
        out = subprocess.run(
            ["git", "rev-parse", "--short", "HEAD"],
            capture_output=True, text=True, timeout=10,
            cwd=Path(__file__).resolve().parent,
        )
        if out.returncode == 0:
            return out.stdout.strip()
    except OSError:
        pass
    return "unknown"


def _load_config(path: str) -> TrainConfig:
    try:
        with open(path, "r", encoding="utf-8") as handle:
            payload = json.load(handle)
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path!r}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path!r} is not valid JSON: {exc.msg}") from None
    if not isinstance(payload, dict):
        raise ConfigError(f"config file {path!r} must hold a JSON object")
    return TrainConfig.from_dict(payload)


def _load_data(source: str, cfg: TrainConfig):
    if source.startswith("gen:"):
        spec_path = source[len("gen:"):]
        if not spec_path:
            synth = SynthConfig()
        else:
            try:
                with open(spec_path, "r", encoding="utf-8") as handle:
                    synth = SynthConfig.from_dict(json.load(handle))
            except OSError as exc:
                raise DataError(f"cannot read synthetic config {spec_path!r}: {exc}") from None
            except json.JSONDecodeError as exc:
                raise DataError(
                    f"synthetic config {spec_path!r} is not valid JSON: {exc.msg}"
                ) from None
        samples = gen_synthetic(synth)
    elif source.startswith("jsonl:"):
        path = source[len("jsonl:"):]
        try:
            samples = load_jsonl(path, label_min=cfg.label_min, label_max=cfg.label_max)
        except OSError as exc:
            raise DataError(f"cannot read dataset {path!r}: {exc}") from None
    else:
        raise ConfigError(
            f"data source must start with 'gen:' or 'jsonl:', got {source!r}"
        )
    if not samples:
        raise DataError(f"data source {source!r} produced no samples")
    labels = labels_of(samples)
    if labels.min() < cfg.label_min or labels.max() > cfg.label_max:
        raise DataError(
            f"dataset labels span [{labels.min()}, {labels.max()}], outside the "
            f"configured range [{cfg.label_min}, {cfg.label_max}]"
        )
    return samples


def _out_dir(arg: str | None, seed: int) -> Path:
    if arg:
        return Path(arg)
    base = Path(os.environ.get("MODALALIGN_OUT", "runs"))
    stamp = time.strftime("%Y%m%d-%H%M%S")
    return base / f"{stamp}-{seed}"


def _sanitize_spec(spec: str) -> str:
    return spec.replace("/", "_") if spec else "none"


def _write_run(out_dir: Path, cfg: TrainConfig, result, data_source: str,
               split_sizes: dict, elapsed: float, started_at: float) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "format_version": MANIFEST_FORMAT_VERSION,
        "config": cfg.to_dict(),
        "revision": _source_revision(),
        "seed": cfg.seed,
        "data_source": data_source,
        "split_sizes": split_sizes,
        "epochs": result.history,
        "final_metrics": {name: report.to_dict()
                          for name, report in result.final_metrics.items()},
        "timing": {"started_at": started_at, "wall_clock_seconds": elapsed},
    }
    with open(out_dir / "manifest.json", "w", encoding="utf-8") as handle:
        json.dump(manifest, handle, sort_keys=True, indent=2)
        handle.write("\n")
    with open(out_dir / "metrics.txt", "w", encoding="utf-8") as handle:
        handle.write(format_table(result.final_metrics))
    with open(out_dir / "checkpoint.json", "w", encoding="utf-8") as handle:
        json.dump(checkpoint_dict(result), handle, sort_keys=True)
        handle.write("\n")


def cmd_train(args) -> int:
    try:
        cfg = _load_config(args.config)
        if args.seed is not None:
            cfg = dataclasses.replace(cfg, seed=args.seed).validate()
        specs = [cfg.alignment_spec]
        if args.spec_sweep is not None:
            specs = [s.strip() for s in args.spec_sweep.split(",")]
            for s in specs:
                dataclasses.replace(cfg, alignment_spec=s).validate()
    except _CONFIG_ERRORS as exc:
        return _fail("config", exc)

    try:
        samples = _load_data(args.data, cfg)
    except _CONFIG_ERRORS as exc:
        return _fail("config", exc)
    except _DATA_ERRORS as exc:
        return _fail("data", exc)

    train, valid, test = split_dataset(samples, SPLIT_FRACTIONS, seed=cfg.seed)
    split_sizes = {"train": len(train), "valid": len(valid), "test": len(test)}
    out_root = _out_dir(args.out, cfg.seed)
    sweep = len(specs) > 1
    for spec in specs:
        run_cfg = dataclasses.replace(cfg, alignment_spec=spec)
        run_dir = out_root / _sanitize_spec(spec) if sweep else out_root
        started_at = time.time()
        try:
            result = run_training(train, run_cfg, {"valid": valid, "test": test})
        except _DATA_ERRORS as exc:
            return _fail("data", exc)
        except _NUMERIC_ERRORS as exc:
            return _fail("numeric", exc)
        _write_run(run_dir, run_cfg, result, args.data, split_sizes,
                   time.time() - started_at, started_at)
        table = format_table(result.final_metrics)
        label = f" [{spec or 'no alignment'}]" if sweep else ""
        print(f"run complete{label}: {run_dir}")
        print(table, end="")
    return EXIT_OK


def _print_suite(name: str, suite: dict) -> None:
    for check, c in suite["checks"].items():
        status = "PASS" if c["passed"] else "FAIL"
        print(f"{name}/{check}: {status} (max error {c['value']:.3e}, "
              f"tolerance {c['tolerance']:.1e})")


def cmd_verify(args) -> int:
    seed = args.seed if args.seed is not None else 0
    try:
        if args.which == "gradcheck":
            report = gradcheck(seed=seed)
            for block, b in report["blocks"].items():
                status = "PASS" if b["passed"] else "FAIL"
                print(f"gradcheck/{block}: {status} (max rel err {b['max_rel_err']:.3e}, "
                      f"tolerance {b['tolerance']:.1e})")
            return EXIT_OK if report["passed"] else EXIT_CHECK_FAILED
        if args.which == "optimal-map":
            suite = verify_optimal_map(seed)
        else:
            suite = verify_ulgm(seed)
    except _NUMERIC_ERRORS as exc:
        return _fail("numeric", exc)
    _print_suite(args.which, suite)
    return EXIT_OK if suite["passed"] else EXIT_CHECK_FAILED


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="modalalign",
        description="Train and verify the covariance-alignment multimodal regressor.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="run a training experiment")
    train.add_argument("--config", required=True, help="path to a TrainConfig JSON file")
    train.add_argument("--data", required=True,
                       help="data source: gen:<synth-config.json> or jsonl:<path>")
    train.add_argument("--out", default=None, help="output directory")
    train.add_argument("--seed", type=int, default=None, help="override the config seed")
    train.add_argument("--spec-sweep", default=None,
                       help="comma-separated alignment specs, one run per spec")
    train.set_defaults(func=cmd_train)

    verify = sub.add_parser("verify", help="run a verification suite")
    verify.add_argument("which", choices=["gradcheck", "optimal-map", "ulgm"])
    verify.add_argument("--seed", type=int, default=None)
    verify.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ModalAlignError as exc:  # uncategorized library error
        return _fail("numeric", exc)


if __name__ == "__main__":
    sys.exit(main())
