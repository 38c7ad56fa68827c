"""ROC/AUC, repeated-run statistics, grid search and benchmark export."""

from __future__ import annotations

import csv
import io
import itertools
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .pipeline import run_pipeline
from .raster import (
    apply_transform, as_mask, atomic_write_bytes, extract_pairs, normalize_channels, sample_mask,
)
from .regress import RegressorSpec, fit, hyper_to_dict
from .regress.rf import oob_error

logger = logging.getLogger(__name__)

# Flood data set, 100 runs per method: (m_AUC, sigma_AUC, m_t [s], sigma_t [s])
FLOOD_REFERENCE = {
    "gp": (0.74692, 0.00043, 257.11, 1.47016),
    "rf": (0.81680, 0.00541, 132.00, 0.77075),
    "svr": (0.81299, 0.05455, 2024.58, 396.86244),
    "hpt": (0.84001, 0.01450, 924.91, 8.99086),
}
# Fire data set: every method scored above this AUC
TEXAS_MIN_AUC = 0.98

TEXAS_CONFIGS = {
    "gp": {"restarts": 1},
    "svr": {"penalty": 1.0, "insensitivity": 0.1, "kernel_width": 1.0},
    "rf": {"trees": 128, "feature_rule": "third", "min_leaf": 5},
    "hpt": {"neighbours": 300, "kernel_width": 100.0},
}
CALIFORNIA_GRIDS = {
    "rf": {"trees": [32, 64, 128, 256, 512], "min_leaf": [5, 10, 15, 20]},
    "hpt": {"neighbours": [16, 32, 64, 128], "kernel_width": [1e-2, 1e-1, 1.0, 1e1, 1e2, 1e3]},
}
CALIFORNIA_GP_RESTARTS = 5
TRAINING_FRACTION = 0.02

SELECTIONS = ("auto", "cross_validation", "oob", "validation", "auc_on_validation")


# ---------------------------------------------------------------- ROC / AUC


@dataclass
class RocResult:
    """ROC points from (0, 0) to (1, 1). ``auc`` is None when the truth holds
    a single class, in which case the curve is empty."""

    fpr: np.ndarray
    tpr: np.ndarray
    auc: float | None
    positives: int
    negatives: int

    @property
    def defined(self) -> bool:
        return self.auc is not None


def roc_auc(scores, truth) -> RocResult:
    """ROC over every distinct score, higher score meaning "changed".

    Equal scores form one threshold step, so the trapezoidal area equals
    ``P(s+ > s-) + P(s+ == s-) / 2``. The area is accumulated in integers
    and divided once, which makes it exact.
    """
    s = np.asarray(scores, dtype=np.float64).ravel()
    t = np.asarray(truth, dtype=bool).ravel()
    if s.shape != t.shape:
        raise ValueError(f"{s.size} scores for {t.size} truth labels")
    n_pos = int(t.sum())
    n_neg = int(t.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        return RocResult(np.empty(0), np.empty(0), None, n_pos, n_neg)
    uniq, inverse = np.unique(s, return_inverse=True)
    tp_g = np.bincount(inverse, weights=t, minlength=uniq.size).astype(np.int64)[::-1]
    fp_g = np.bincount(inverse, weights=~t, minlength=uniq.size).astype(np.int64)[::-1]
    tp = np.concatenate([[0], np.cumsum(tp_g)])
    fp = np.concatenate([[0], np.cumsum(fp_g)])
    doubled = int(np.sum(fp_g * (2 * tp[:-1] + tp_g)))
    auc = doubled / (2 * n_pos * n_neg)
    return RocResult(fp / n_neg, tp / n_pos, auc, n_pos, n_neg)


# ---------------------------------------------------------------- repeated runs


@dataclass
class RunRecord:
    method: str
    hyperparameters: dict
    seed: int
    auc: float | None
    elapsed_s: float


@dataclass
class BenchmarkRecord:
    method: str
    hyperparameters: dict
    auc_mean: float
    auc_std: float
    time_mean_s: float
    time_std_s: float
    runs: int
    run_records: list = field(default_factory=list)

    def to_json(self) -> str:
        d = asdict(self)
        return json.dumps(d, sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "BenchmarkRecord":
        d = json.loads(line)
        d["run_records"] = [RunRecord(**r) for r in d.get("run_records", [])]
        return cls(**d)


def fraction_sampler(region, fraction: float = TRAINING_FRACTION):
    """Mask sampler drawing ``fraction`` of the image from ``region``."""
    region = as_mask(region)
    return lambda seed: sample_mask(region, fraction, seed)


def _population_stats(values):
    arr = np.asarray([v for v in values if v is not None and not math.isnan(v)], dtype=np.float64)
    if arr.size == 0:
        return math.nan, math.nan
    return float(arr.mean()), float(arr.std())


def repeated_runs(x, y, spec: RegressorSpec, n_runs: int, mask_sampler, truth,
                  workers=None, **pipeline_kw) -> BenchmarkRecord:
    """Run the pipeline ``n_runs`` times, each with a fresh training mask.

    Run ``i`` uses seed ``spec.seed + i`` for both the mask sampler and the
    regressor. Standard deviations are population (``ddof=0``).
    """
    if n_runs < 1:
        raise ValueError("n_runs must be >= 1")
    records = []
    for i in range(n_runs):
        run_seed = spec.seed + i
        mask = mask_sampler(run_seed)
        result = run_pipeline(x, y, mask, spec.replace(seed=run_seed), workers=workers, **pipeline_kw)
        auc = roc_auc(result.score, truth).auc
        records.append(RunRecord(spec.method, hyper_to_dict(spec.hyper), run_seed, auc,
                                 result.timings.total_s))
        logger.info("run %d/%d %s: AUC %s, %.3fs", i + 1, n_runs, spec.method, auc,
                    result.timings.total_s)
    auc_mean, auc_std = _population_stats([r.auc for r in records])
    t_mean, t_std = _population_stats([r.elapsed_s for r in records])
    return BenchmarkRecord(spec.method, hyper_to_dict(spec.hyper), auc_mean, auc_std,
                           t_mean, t_std, n_runs, records)


# ---------------------------------------------------------------- grid search


def make_grid(method: str, seed: int = 0, base: dict | None = None, **axes) -> list[RegressorSpec]:
    """Cartesian product of hyperparameter ``axes`` as a list of specs, in
    row-major order of the keyword arguments."""
    base = dict(base or {})
    names = list(axes)
    specs = []
    for combo in itertools.product(*(axes[n] for n in names)):
        specs.append(RegressorSpec(method, {**base, **dict(zip(names, combo))}, seed))
    return specs


@dataclass
class GridRecord:
    spec: RegressorSpec
    criterion: str
    score: float
    elapsed_s: float
    auc: float | None = None
    note: str = ""


@dataclass
class GridResult:
    best: RegressorSpec
    records: list


def _sq_error(model, inputs, targets):
    err = targets - model.predict(inputs)
    return float(np.mean(np.sum(err * err, axis=1)))


def _two_way_error(spec, train, held):
    return (_sq_error(fit(spec, train), held.inputs, held.targets)
            + _sq_error(fit(spec, train.swapped()), held.targets, held.inputs))


def _cv_error(spec, pairs, folds, seed):
    order = np.random.default_rng(seed).permutation(pairs.size)
    parts = np.array_split(order, min(folds, pairs.size))
    total = 0.0
    for k, held in enumerate(parts):
        train = np.sort(np.concatenate([p for j, p in enumerate(parts) if j != k]))
        total += _two_way_error(spec, pairs.take(train), pairs.take(np.sort(held)))
    return total / len(parts)


def _holdout_error(spec, pairs, fraction, seed):
    order = np.random.default_rng(seed).permutation(pairs.size)
    n_held = max(1, int(round(fraction * pairs.size)))
    held, train = np.sort(order[:n_held]), np.sort(order[n_held:])
    return _two_way_error(spec, pairs.take(train), pairs.take(held))


def _oob(spec, pairs):
    if spec.method != "rf":
        raise ValueError("out-of-bag selection needs the rf back-end")
    total = 0.0
    for t in (pairs, pairs.swapped()):
        err = oob_error(fit(spec, t), t)
        if err is None:
            return math.inf
        total += err
    return total


def grid_search(x, y, train_mask, specs, selection: str = "auto", truth=None,
                folds: int = 5, validation_fraction: float = 0.2, seed: int = 0,
                workers=None, **pipeline_kw) -> GridResult:
    """Score every spec and return the lowest, first in grid order on ties.

    ``auto`` uses k-fold cross-validation for SVR, out-of-bag error for RF and
    a hold-out split for GP and HPT. Errors are the two-way sum of mean
    squared Euclidean prediction errors on the normalised images.
    ``auc_on_validation`` runs the full pipeline and scores ``-AUC`` against
    ``truth``. Specs that cannot be fitted (e.g. K larger than a fold) score
    ``inf``.
    """
    specs = list(specs)
    if not specs:
        raise ValueError("empty grid")
    if selection not in SELECTIONS:
        raise ValueError(f"selection must be one of {SELECTIONS}")
    xn = normalize_channels(apply_transform(x, pipeline_kw.get("transform_x", "none")))
    yn = normalize_channels(apply_transform(y, pipeline_kw.get("transform_y", "none")))
    pairs = extract_pairs(xn, yn, train_mask)
    records = []
    best_i = None
    for spec in specs:
        crit = selection
        if crit == "auto":
            crit = {"svr": "cross_validation", "rf": "oob"}.get(spec.method, "validation")
        start = time.perf_counter()
        auc, note = None, ""
        try:
            if crit == "cross_validation":
                score = _cv_error(spec, pairs, folds, seed)
            elif crit == "oob":
                score = _oob(spec, pairs)
            elif crit == "validation":
                score = _holdout_error(spec, pairs, validation_fraction, seed)
            else:
                if truth is None:
                    raise ValueError("auc_on_validation needs ground truth")
                result = run_pipeline(x, y, train_mask, spec, workers=workers, **pipeline_kw)
                auc = roc_auc(result.score, truth).auc
                score = -auc if auc is not None else math.inf
        except (ValueError, RuntimeError) as exc:
            if crit == "auc_on_validation" and truth is None:
                raise
            score, note = math.inf, str(exc)
        elapsed = time.perf_counter() - start
        records.append(GridRecord(spec, crit, score, elapsed, auc, note))
        logger.info("grid %s %s: %s=%.6g", spec.method, hyper_to_dict(spec.hyper), crit, score)
        if best_i is None or score < records[best_i].score:
            best_i = len(records) - 1
    return GridResult(records[best_i].spec, records)


# ---------------------------------------------------------------- export

SCATTER_FIELDS = ("method", "hyperparameters", "elapsed_s", "auc")


def _scatter_rows(records):
    rows = []
    for r in records:
        if isinstance(r, BenchmarkRecord):
            rows.extend(_scatter_rows(r.run_records))
        elif isinstance(r, GridRecord):
            rows.append((r.spec.method, hyper_to_dict(r.spec.hyper), r.elapsed_s, r.auc))
        else:
            rows.append((r.method, r.hyperparameters, r.elapsed_s, r.auc))
    return rows


def scatter_csv(records) -> str:
    """CSV of (method, hyperparameters, elapsed_s, auc), sorted by method then
    elapsed time. Floats use ``repr`` so parsing them back is exact."""
    rows = _scatter_rows(records)
    if not rows:
        raise ValueError("no records to export")
    rows.sort(key=lambda r: (r[0], r[2]))
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SCATTER_FIELDS)
    for method, hyper, elapsed, auc in rows:
        writer.writerow([method, json.dumps(hyper, sort_keys=True), repr(float(elapsed)),
                         "" if auc is None else repr(float(auc))])
    return buf.getvalue()


def scatter_export(records, path) -> None:
    atomic_write_bytes(path, scatter_csv(records).encode("utf-8"))


def read_scatter(path) -> list[dict]:
    with open(path, newline="") as fh:
        out = []
        for row in csv.DictReader(fh):
            out.append({
                "method": row["method"],
                "hyperparameters": json.loads(row["hyperparameters"]),
                "elapsed_s": float(row["elapsed_s"]),
                "auc": float(row["auc"]) if row["auc"] else None,
            })
        return out


def write_jsonl(records, path) -> None:
    lines = "".join(r.to_json() + "\n" for r in records)
    atomic_write_bytes(path, lines.encode("utf-8"))


def read_jsonl(path) -> list[BenchmarkRecord]:
    with open(path) as fh:
        return [BenchmarkRecord.from_json(line) for line in fh if line.strip()]
