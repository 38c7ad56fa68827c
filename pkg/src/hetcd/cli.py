"""Command-line entry point: ``hetcd {synth,run,eval,grid}``.

Settings come from one JSON config document; command-line flags override
config keys, which override built-in defaults. Failures exit with status 1
and print a single ``error: <category>: <message>`` line on stderr.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import kernels
from ._parallel import worker_count
from .evaluation import (
    TRAINING_FRACTION, fraction_sampler, grid_search, make_grid, repeated_runs, roc_auc,
    scatter_export, write_jsonl,
)
from .pipeline import run_pipeline, write_intermediates
from .raster import (
    RasterFormatError, as_mask, atomic_write_bytes, read_mask, read_raster, sample_mask, write_mask,
)
from .regress import ModelFormatError, RegressorSpec, hyper_to_dict
from .regress.gp import GpError
from .regress.svr import SvrError
from .synth import SynthConfig, generate, write_pair

logger = logging.getLogger("hetcd")

DEFAULTS = {
    "image_x": None,
    "image_y": None,
    "train_mask": None,
    "ground_truth": None,
    "unchanged_mask": None,
    "output_dir": "hetcd-out",
    "method": "rf",
    "hyper": {},
    "seed": 0,
    "clip_sigma": 4.0,
    "threshold": 0.5,
    "median": True,
    "transform_x": "none",
    "transform_y": "none",
    "runs": 100,
    "train_fraction": TRAINING_FRACTION,
    "grid": {},
    "selection": "auto",
    "synth": {},
}

# flag dest -> config key
_FLAG_KEYS = {
    "method": "method", "seed": "seed", "threshold": "threshold", "clip_sigma": "clip_sigma",
    "runs": "runs", "out": "output_dir", "image_x": "image_x", "image_y": "image_y",
    "train_mask": "train_mask", "ground_truth": "ground_truth", "style": None,
}


class CliError(Exception):
    def __init__(self, category, message):
        super().__init__(message)
        self.category = category


def _threshold(value):
    return value if value == "otsu" else float(value)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config document")
    common.add_argument("--method", choices=["gp", "svr", "rf", "hpt"])
    common.add_argument("--seed", type=int)
    common.add_argument("--threshold", type=_threshold, help="score threshold in [0, 1] or 'otsu'")
    common.add_argument("--clip-sigma", type=float, dest="clip_sigma")
    common.add_argument("--no-median", action="store_true", help="skip the 3x3 median filter")
    common.add_argument("--runs", type=int)
    common.add_argument("--out", help="output directory")
    common.add_argument("--image-x", dest="image_x")
    common.add_argument("--image-y", dest="image_y")
    common.add_argument("--train-mask", dest="train_mask")
    common.add_argument("--ground-truth", dest="ground_truth")
    common.add_argument("-v", "--verbose", action="count", default=0)

    parser = argparse.ArgumentParser(prog="hetcd", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    synth = sub.add_parser("synth", parents=[common], help="generate a synthetic image pair")
    synth.add_argument("--style", choices=["optical", "sar_like"])
    sub.add_parser("run", parents=[common], help="run change detection once")
    sub.add_parser("eval", parents=[common], help="repeated runs with fresh training sets")
    sub.add_parser("grid", parents=[common], help="hyperparameter grid search")
    return parser


def load_config(args) -> dict:
    cfg = dict(DEFAULTS)
    base = Path(".")
    if args.config:
        path = Path(args.config)
        try:
            loaded = json.loads(path.read_text())
        except FileNotFoundError as exc:
            raise CliError("io", f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise CliError("config", f"{path}: {exc}") from exc
        unknown = set(loaded) - set(DEFAULTS)
        if unknown:
            raise CliError("config", f"unknown config keys: {sorted(unknown)}")
        cfg.update(loaded)
        base = path.parent
        # relative paths in a config file are relative to that file
        for key in ("image_x", "image_y", "train_mask", "ground_truth", "unchanged_mask", "output_dir"):
            if cfg.get(key) and key in loaded and not Path(cfg[key]).is_absolute():
                cfg[key] = str(base / cfg[key])
    for dest, key in _FLAG_KEYS.items():
        value = getattr(args, dest, None)
        if key and value is not None:
            cfg[key] = value
    if args.no_median:
        cfg["median"] = False
    if getattr(args, "style", None):
        cfg["synth"] = {**cfg["synth"], "sensor_b_style": args.style}
    return cfg


def _spec(cfg) -> RegressorSpec:
    try:
        return RegressorSpec(cfg["method"], dict(cfg["hyper"]) or None, int(cfg["seed"]))
    except TypeError as exc:
        raise CliError("config", f"bad hyperparameters for {cfg['method']}: {exc}") from exc


def _require(cfg, *keys):
    missing = [k for k in keys if not cfg.get(k)]
    if missing:
        raise CliError("config", f"missing required setting(s): {', '.join(missing)}")


def _write_json(path, payload):
    atomic_write_bytes(path, (json.dumps(payload, indent=2, sort_keys=True) + "\n").encode())


def _pipeline_kw(cfg):
    return {
        "k": float(cfg["clip_sigma"]), "t": cfg["threshold"], "median": bool(cfg["median"]),
        "transform_x": cfg["transform_x"], "transform_y": cfg["transform_y"],
    }


def cmd_synth(cfg) -> int:
    synth_cfg = SynthConfig(**{**cfg["synth"], "seed": int(cfg["seed"])})
    out = Path(cfg["output_dir"])
    pair = generate(synth_cfg)
    write_pair(pair, out)
    train = sample_mask(pair.unchanged_mask, float(cfg["train_fraction"]), int(cfg["seed"]))
    write_mask(train, out / "train_mask.hcdr")
    run_cfg = {
        "image_x": "x.hcdr", "image_y": "y.hcdr", "train_mask": "train_mask.hcdr",
        "ground_truth": "change_mask.hcdr", "unchanged_mask": "unchanged_mask.hcdr",
        "output_dir": "result", "seed": int(cfg["seed"]),
        "transform_y": "log" if synth_cfg.sensor_b_style == "sar_like" else "none",
    }
    _write_json(out / "config.json", run_cfg)
    print(f"wrote synthetic pair ({synth_cfg.sensor_b_style}, {synth_cfg.height}x{synth_cfg.width}) to {out}")
    return 0


def _load_inputs(cfg):
    x = read_raster(cfg["image_x"])
    y = read_raster(cfg["image_y"])
    truth = read_mask(cfg["ground_truth"]) if cfg.get("ground_truth") else None
    if truth is not None:
        as_mask(truth, x.shape)
    return x, y, truth


def cmd_run(cfg) -> int:
    _require(cfg, "image_x", "image_y", "train_mask")
    x, y, truth = _load_inputs(cfg)
    mask = read_mask(cfg["train_mask"])
    spec = _spec(cfg)
    out = Path(cfg["output_dir"])
    result = run_pipeline(x, y, mask, spec, workers=worker_count(), **_pipeline_kw(cfg))
    write_intermediates(result, out)
    score_bytes = np.ascontiguousarray(result.score, dtype="<f8").tobytes()
    summary = {
        "method": spec.method,
        "hyperparameters": hyper_to_dict(spec.hyper),
        "seed": spec.seed,
        "threshold": result.threshold,
        "changed_pixels": int(result.change_map.sum()),
        "score_sha256": hashlib.sha256(score_bytes).hexdigest(),
        "timings": {"forward_s": result.timings.forward_s,
                    "backward_s": result.timings.backward_s,
                    "total_s": result.timings.total_s},
        "backend": kernels.BACKEND,
        "config": cfg,
    }
    if truth is not None:
        summary["auc"] = roc_auc(result.score, truth).auc
    _write_json(out / "result.json", summary)
    if truth is not None:
        auc = summary["auc"]
        print(f"AUC {auc:.6f}" if auc is not None else "AUC undefined (single-class ground truth)")
    print(f"{spec.method}: {result.timings.total_s:.3f}s, {summary['changed_pixels']} changed pixels, "
          f"outputs in {out}")
    return 0


def _sampling_region(cfg, truth):
    if cfg.get("unchanged_mask"):
        return read_mask(cfg["unchanged_mask"])
    if cfg.get("train_mask"):
        return read_mask(cfg["train_mask"])
    return ~truth


def cmd_eval(cfg) -> int:
    _require(cfg, "image_x", "image_y", "ground_truth")
    x, y, truth = _load_inputs(cfg)
    spec = _spec(cfg)
    sampler = fraction_sampler(_sampling_region(cfg, truth), float(cfg["train_fraction"]))
    record = repeated_runs(x, y, spec, int(cfg["runs"]), sampler, truth, workers=worker_count(),
                           **_pipeline_kw(cfg))
    out = Path(cfg["output_dir"])
    write_jsonl([record], out / "benchmark.jsonl")
    scatter_export([record], out / "benchmark.csv")
    _write_json(out / "result.json", {
        "method": record.method, "hyperparameters": record.hyperparameters,
        "runs": record.runs, "auc_mean": record.auc_mean, "auc_std": record.auc_std,
        "time_mean_s": record.time_mean_s, "time_std_s": record.time_std_s,
        "backend": kernels.BACKEND, "config": cfg,
    })
    print(f"{record.method}: AUC {record.auc_mean:.5f} +/- {record.auc_std:.5f}, "
          f"time {record.time_mean_s:.3f} +/- {record.time_std_s:.3f}s over {record.runs} runs")
    return 0


def cmd_grid(cfg) -> int:
    _require(cfg, "image_x", "image_y", "train_mask", "grid")
    x, y, truth = _load_inputs(cfg)
    mask = read_mask(cfg["train_mask"])
    grid = make_grid(cfg["method"], int(cfg["seed"]), base=cfg["hyper"], **cfg["grid"])
    result = grid_search(x, y, mask, grid, selection=cfg["selection"], truth=truth,
                         seed=int(cfg["seed"]), workers=worker_count(), **_pipeline_kw(cfg))
    out = Path(cfg["output_dir"])
    lines = ["method,hyperparameters,criterion,score,elapsed_s,auc,note"]
    for r in result.records:
        hyper = json.dumps(hyper_to_dict(r.spec.hyper), sort_keys=True).replace('"', '""')
        auc = "" if r.auc is None else repr(r.auc)
        note = r.note.replace('"', '""')
        lines.append(f'{r.spec.method},"{hyper}",{r.criterion},{r.score!r},{r.elapsed_s!r},{auc},"{note}"')
    atomic_write_bytes(out / "grid.csv", ("\n".join(lines) + "\n").encode())
    _write_json(out / "best_spec.json", result.best.to_dict())
    best = next(r for r in result.records if r.spec is result.best)
    print(f"best {result.best.method} {json.dumps(hyper_to_dict(result.best.hyper), sort_keys=True)} "
          f"({best.criterion}={best.score:.6g}) of {len(result.records)} grid points")
    return 0


COMMANDS = {"synth": cmd_synth, "run": cmd_run, "eval": cmd_eval, "grid": cmd_grid}


def _category(exc) -> str:
    if isinstance(exc, CliError):
        return exc.category
    if isinstance(exc, (RasterFormatError, ModelFormatError)):
        return "format"
    if isinstance(exc, (FileNotFoundError, PermissionError, IsADirectoryError)):
        return "io"
    if isinstance(exc, (GpError, SvrError)):
        return "fit"
    if isinstance(exc, (TypeError, KeyError)):
        return "config"
    return "value"


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args)
        return COMMANDS[args.command](cfg)
    except (CliError, ValueError, OSError, RuntimeError, TypeError, KeyError) as exc:
        message = " ".join(str(exc).split()) or type(exc).__name__
        print(f"error: {_category(exc)}: {message}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
