"""Two-way image regression change detection.

``run_pipeline`` chains the stages in a fixed order::

    two_way_regress -> distance images -> clip_outliers -> normalize01
    -> fuse -> median_filter3 -> threshold

and keeps every intermediate in the returned :class:`ChangeResult`.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .raster import (
    Raster, apply_transform, as_mask, extract_pairs, normalize_channels, write_mask, write_pgm,
    write_raster,
)
from .regress import RegressorSpec, fit, predict_raster

logger = logging.getLogger(__name__)


@dataclass
class Timings:
    """Wall-clock seconds per regression direction (fit through prediction)."""

    forward_s: float = 0.0
    backward_s: float = 0.0

    @property
    def total_s(self) -> float:
        return self.forward_s + self.backward_s


@dataclass
class ChangeResult:
    score: np.ndarray
    change_map: np.ndarray
    threshold: float
    distance_y: np.ndarray
    distance_x: np.ndarray
    clipped_y: np.ndarray
    clipped_x: np.ndarray
    normalized_y: np.ndarray
    normalized_x: np.ndarray
    fused: np.ndarray
    y_hat: Raster
    x_hat: Raster
    timings: Timings = field(default_factory=Timings)


def _as_distance(d) -> np.ndarray:
    d = np.asarray(d, dtype=np.float64)
    if d.ndim == 3 and d.shape[2] == 1:
        d = d[:, :, 0]
    if d.ndim != 2:
        raise ValueError(f"distance image must be 2-D, got shape {d.shape}")
    return d


def two_way_regress(x: Raster, y: Raster, mask, spec: RegressorSpec, workers=None,
                    normalize: bool = True, transform_x: str = "none", transform_y: str = "none"):
    """Predict ``y_hat`` from ``x`` and ``x_hat`` from ``y``.

    Both regressions learn from the same masked pixel pairs. Each image may
    first go through an input transform (``"log"`` for SAR intensities), then
    is min-max scaled per channel (``normalize=False`` skips that); the
    predictions live in these conditioned domains. Returns
    ``(y_hat, x_hat, timings, x_used, y_used)``.
    """
    if (x.height, x.width) != (y.height, y.width):
        raise ValueError(f"images are not co-registered: {x.shape[:2]} vs {y.shape[:2]}")
    x, y = apply_transform(x, transform_x), apply_transform(y, transform_y)
    if normalize:
        x, y = normalize_channels(x), normalize_channels(y)
    pairs = extract_pairs(x, y, mask)

    start = time.perf_counter()
    forward = fit(spec, pairs, workers=workers)
    y_hat = predict_raster(forward, x, workers=workers)
    forward_s = time.perf_counter() - start

    start = time.perf_counter()
    backward = fit(spec, pairs.swapped(), workers=workers)
    x_hat = predict_raster(backward, y, workers=workers)
    backward_s = time.perf_counter() - start

    logger.info("%s regression: forward %.3fs, backward %.3fs", spec.method, forward_s, backward_s)
    return y_hat, x_hat, Timings(forward_s, backward_s), x, y


def distance_image(a: Raster, b: Raster) -> np.ndarray:
    """Per-pixel Euclidean norm of ``a - b`` across channels."""
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    diff = a.data - b.data
    return np.sqrt(np.sum(diff * diff, axis=2))


def clip_outliers(d, k: float = 4.0) -> np.ndarray:
    """Cap values at ``mean + k * std`` of ``d`` (population std)."""
    d = _as_distance(d)
    if d.size == 0:
        raise ValueError("empty distance image")
    if d.min() == d.max():
        return d.copy()
    cap = d.mean() + k * d.std()
    return np.where(d > cap, cap, d)


def normalize01(d) -> np.ndarray:
    """Min-max scale to [0, 1]; a constant image maps to zeros."""
    d = _as_distance(d)
    if d.size == 0:
        raise ValueError("empty distance image")
    lo, hi = d.min(), d.max()
    if hi == lo:
        return np.zeros_like(d)
    return (d - lo) / (hi - lo)


def fuse(d1, d2) -> np.ndarray:
    """Pixel-wise average of two normalised distance images."""
    d1, d2 = _as_distance(d1), _as_distance(d2)
    if d1.shape != d2.shape:
        raise ValueError(f"shape mismatch: {d1.shape} vs {d2.shape}")
    return (d1 + d2) / 2.0


def median_filter3(d) -> np.ndarray:
    """3x3 median; border pixels use the truncated window."""
    d = np.ascontiguousarray(_as_distance(d))
    if d.size == 0:
        raise ValueError("empty distance image")
    return kernels.median3(d)


def threshold(d, t: float) -> np.ndarray:
    """Change mask: true where the score exceeds ``t``."""
    return _as_distance(d) > t


def otsu_threshold(d, bins: int = 256) -> float:
    """Threshold maximising between-class variance of a [0, 1] score map.

    Not part of the core method, which leaves the threshold to the user; an
    automatic choice for convenience.
    """
    d = _as_distance(d).ravel()
    hist, edges = np.histogram(d, bins=bins, range=(0.0, 1.0))
    centers = 0.5 * (edges[:-1] + edges[1:])
    w0 = np.cumsum(hist)
    w1 = w0[-1] - w0
    s0 = np.cumsum(hist * centers)
    m0 = np.divide(s0, w0, out=np.zeros_like(s0), where=w0 > 0)
    m1 = np.divide(s0[-1] - s0, w1, out=np.zeros_like(s0), where=w1 > 0)
    between = w0 * w1 * (m0 - m1) ** 2
    return float(edges[1:][int(np.argmax(between))])


def run_pipeline(x: Raster, y: Raster, train_mask, spec: RegressorSpec, k: float = 4.0,
                 t: float | str = 0.5, median: bool = True, workers=None,
                 transform_x: str = "none", transform_y: str = "none") -> ChangeResult:
    """Full change detection. ``t="otsu"`` picks the threshold automatically."""
    train_mask = as_mask(train_mask, x.shape)
    y_hat, x_hat, timings, xn, yn = two_way_regress(
        x, y, train_mask, spec, workers=workers, transform_x=transform_x, transform_y=transform_y)
    dist_y = distance_image(yn, y_hat)
    dist_x = distance_image(xn, x_hat)
    clip_y, clip_x = clip_outliers(dist_y, k), clip_outliers(dist_x, k)
    norm_y, norm_x = normalize01(clip_y), normalize01(clip_x)
    fused = fuse(norm_y, norm_x)
    score = median_filter3(fused) if median else fused
    t_used = otsu_threshold(score) if t == "otsu" else float(t)
    return ChangeResult(
        score=score, change_map=threshold(score, t_used), threshold=t_used,
        distance_y=dist_y, distance_x=dist_x, clipped_y=clip_y, clipped_x=clip_x,
        normalized_y=norm_y, normalized_x=norm_x, fused=fused,
        y_hat=y_hat, x_hat=x_hat, timings=timings,
    )


def write_intermediates(result: ChangeResult, out_dir) -> list[Path]:
    """Write every stage as HCDR plus a PGM preview; returns the paths."""
    out_dir = Path(out_dir)
    written = []
    maps = {
        "distance_y": normalize01(result.distance_y),
        "distance_x": normalize01(result.distance_x),
        "normalized_y": result.normalized_y,
        "normalized_x": result.normalized_x,
        "fused": result.fused,
        "score": result.score,
    }
    raw = {"distance_y": result.distance_y, "distance_x": result.distance_x}
    for name, img in maps.items():
        path = out_dir / f"{name}.hcdr"
        write_raster(Raster(raw.get(name, img)), path)
        write_pgm(img, out_dir / f"{name}.pgm")
        written += [path, out_dir / f"{name}.pgm"]
    write_raster(result.y_hat, out_dir / "y_hat.hcdr")
    write_raster(result.x_hat, out_dir / "x_hat.hcdr")
    write_mask(result.change_map, out_dir / "change_map.hcdr")
    write_pgm(result.change_map.astype(np.float64), out_dir / "change_map.pgm")
    written += [out_dir / "y_hat.hcdr", out_dir / "x_hat.hcdr",
                out_dir / "change_map.hcdr", out_dir / "change_map.pgm"]
    return written
