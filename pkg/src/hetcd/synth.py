"""Synthetic co-registered image pairs from two different "sensors".

Both images are nonlinear functions of a shared smooth latent field. Inside a
random rectangle the latent field seen by the second image is replaced, which
plants a change with exact ground truth.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import convolve1d

from .raster import Raster, normalize_channels, write_mask, write_pgm, write_raster

_BINOMIAL5 = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0
SENSOR_STYLES = ("optical", "sar_like")


@dataclass(frozen=True)
class SynthConfig:
    height: int = 64
    width: int = 64
    latent_channels: int = 3
    channels_a: int = 7
    channels_b: int = 3
    sensor_b_style: str = "optical"
    change_fraction: float = 0.05
    noise_sigma: float = 0.02
    seed: int = 0

    def __post_init__(self):
        if self.height < 16 or self.width < 16:
            raise ValueError("synthetic images must be at least 16x16")
        if not 0.0 < self.change_fraction < 1.0:
            raise ValueError("change_fraction must lie in (0, 1)")
        if self.sensor_b_style not in SENSOR_STYLES:
            raise ValueError(f"sensor_b_style must be one of {SENSOR_STYLES}")
        if min(self.latent_channels, self.channels_a, self.channels_b) < 1:
            raise ValueError("channel counts must be >= 1")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")


@dataclass(frozen=True)
class SynthPair:
    x: Raster
    y: Raster
    change_mask: np.ndarray
    unchanged_mask: np.ndarray


def _latent_field(rng, h, w, c):
    field = rng.random((h, w, c))
    for _ in range(3):
        field = convolve1d(field, _BINOMIAL5, axis=0, mode="reflect")
        field = convolve1d(field, _BINOMIAL5, axis=1, mode="reflect")
    field -= field.mean(axis=(0, 1))
    field /= field.std(axis=(0, 1))
    return field


def _rectangle(rng, h, w, fraction):
    area = fraction * h * w
    aspect = np.exp(rng.uniform(np.log(0.5), np.log(2.0)))
    rh = int(np.clip(round(np.sqrt(area * aspect)), 1, h))
    rw = int(np.clip(round(area / rh), 1, w))
    r0 = int(rng.integers(0, h - rh + 1))
    c0 = int(rng.integers(0, w - rw + 1))
    return r0, c0, rh, rw


def _orthonormal(rng, rows, cols):
    """Random ``rows x cols`` matrix with orthonormal rows or columns, so no
    sensor collapses latent directions."""
    n = max(rows, cols)
    q, r = np.linalg.qr(rng.normal(size=(n, n)))
    q *= np.sign(np.diag(r))
    return q[:rows, :cols]


def _optical(rng, latent, channels, noise_sigma):
    lc = latent.shape[2]
    mix = _orthonormal(rng, lc, lc)
    shift = rng.normal(scale=0.3, size=lc)
    hidden = np.tanh(latent @ mix.T + shift)
    gain = _orthonormal(rng, channels, lc) * rng.uniform(0.5, 1.5, size=(channels, 1))
    offset = rng.uniform(-0.5, 0.5, size=channels)
    out = hidden @ gain.T + offset
    return out + rng.normal(scale=noise_sigma, size=out.shape)


def _sar_like(rng, latent, channels):
    lc = latent.shape[2]
    mix = 1.5 * _orthonormal(rng, channels, lc)
    offset = rng.normal(scale=0.2, size=channels)
    intensity = np.exp(latent @ mix.T + offset)
    speckle = rng.gamma(shape=4.0, scale=0.25, size=intensity.shape)
    return intensity * speckle


def generate(cfg: SynthConfig = SynthConfig()) -> SynthPair:
    """Deterministic pair ``(x, y, change_mask, unchanged_mask)`` for ``cfg``."""
    rng = np.random.default_rng(cfg.seed)
    h, w, lc = cfg.height, cfg.width, cfg.latent_channels
    latent = _latent_field(rng, h, w, lc)
    replacement = _latent_field(rng, h, w, lc)

    r0, c0, rh, rw = _rectangle(rng, h, w, cfg.change_fraction)
    change = np.zeros((h, w), dtype=bool)
    change[r0:r0 + rh, c0:c0 + rw] = True
    latent_b = latent.copy()
    latent_b[change] = replacement[change]

    x = _optical(rng, latent, cfg.channels_a, cfg.noise_sigma)
    if cfg.sensor_b_style == "optical":
        y = _optical(rng, latent_b, cfg.channels_b, cfg.noise_sigma)
    else:
        y = _sar_like(rng, latent_b, cfg.channels_b)

    guard = np.zeros((h, w), dtype=bool)
    guard[max(r0 - 2, 0):r0 + rh + 2, max(c0 - 2, 0):c0 + rw + 2] = True
    return SynthPair(Raster(x), Raster(y), change, ~guard)


def _preview(r: Raster) -> np.ndarray:
    return normalize_channels(r).data.mean(axis=2)


def write_pair(pair: SynthPair, out_dir) -> list[Path]:
    """Store the four artifacts as HCDR files with PGM previews."""
    out_dir = Path(out_dir)
    files = []
    for name, r in (("x", pair.x), ("y", pair.y)):
        write_raster(r, out_dir / f"{name}.hcdr")
        write_pgm(_preview(r), out_dir / f"{name}.pgm")
        files += [out_dir / f"{name}.hcdr", out_dir / f"{name}.pgm"]
    for name, m in (("change_mask", pair.change_mask), ("unchanged_mask", pair.unchanged_mask)):
        write_mask(m, out_dir / f"{name}.hcdr")
        write_pgm(m.astype(np.float64), out_dir / f"{name}.pgm")
        files += [out_dir / f"{name}.hcdr", out_dir / f"{name}.pgm"]
    return files
