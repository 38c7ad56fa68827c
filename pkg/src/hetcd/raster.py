"""Image container, training-pair extraction and the HCDR file format.

HCDR layout (little endian)::

    b"HCDR" | u32 version=1 | u32 height | u32 width | u32 channels
    | height*width*channels float32, row-major, channel-interleaved

Masks are stored in the same container with one channel holding 0.0/1.0.
"""

from __future__ import annotations

import math
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"HCDR"
VERSION = 1
_HEADER = struct.Struct("<4sIIII")


class RasterFormatError(ValueError):
    """Raised for malformed or non-finite raster files."""


@dataclass(frozen=True)
class Raster:
    """``height x width x channels`` image of finite reals.

    ``data`` is stored as a read-only float64 array of shape (H, W, C).
    A 2-D array is accepted and treated as a single channel.
    """

    data: np.ndarray

    def __post_init__(self):
        arr = np.array(self.data, dtype=np.float64, copy=True)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3:
            raise ValueError(f"raster data must be 2-D or 3-D, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("raster contains non-finite values")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    def pixels(self) -> np.ndarray:
        """Row-major ``(H*W, C)`` view of the pixel vectors."""
        return self.data.reshape(-1, self.channels)

    def __eq__(self, other):
        if not isinstance(other, Raster):
            return NotImplemented
        return self.shape == other.shape and np.array_equal(self.data, other.data)

    __hash__ = None


@dataclass(frozen=True)
class TrainingSet:
    """``M`` paired vectors taken from the same pixels of two rasters."""

    inputs: np.ndarray
    targets: np.ndarray
    pixel_indices: np.ndarray = field(default=None)

    def __post_init__(self):
        x = np.atleast_2d(np.asarray(self.inputs, dtype=np.float64))
        y = np.atleast_2d(np.asarray(self.targets, dtype=np.float64))
        if x.shape[0] != y.shape[0]:
            raise ValueError(f"inputs have {x.shape[0]} rows but targets have {y.shape[0]}")
        if x.shape[0] < 1:
            raise ValueError("a training set needs at least one row")
        idx = self.pixel_indices
        if idx is None:
            idx = np.full((x.shape[0], 2), -1, dtype=np.int64)
        idx = np.asarray(idx, dtype=np.int64).reshape(-1, 2)
        if idx.shape[0] != x.shape[0]:
            raise ValueError("pixel_indices length does not match the row count")
        for a in (x, y, idx):
            a.setflags(write=False)
        object.__setattr__(self, "inputs", x)
        object.__setattr__(self, "targets", y)
        object.__setattr__(self, "pixel_indices", idx)

    @property
    def size(self) -> int:
        return self.inputs.shape[0]

    @property
    def input_dim(self) -> int:
        return self.inputs.shape[1]

    @property
    def output_dim(self) -> int:
        return self.targets.shape[1]

    def swapped(self) -> "TrainingSet":
        """Same pairs with inputs and targets exchanged."""
        return TrainingSet(self.targets, self.inputs, self.pixel_indices)

    def take(self, rows) -> "TrainingSet":
        rows = np.asarray(rows, dtype=np.intp)
        return TrainingSet(self.inputs[rows], self.targets[rows], self.pixel_indices[rows])


def as_mask(values, shape=None) -> np.ndarray:
    """Validate and return a 2-D boolean mask, optionally checking its shape."""
    m = np.asarray(values)
    if m.ndim == 3 and m.shape[2] == 1:
        m = m[:, :, 0]
    if m.ndim != 2:
        raise ValueError(f"mask must be 2-D, got shape {m.shape}")
    if shape is not None and m.shape != tuple(shape[:2]):
        raise ValueError(f"mask shape {m.shape} does not match raster {tuple(shape[:2])}")
    return m.astype(bool)


def normalize_channels(r: Raster) -> Raster:
    """Min-max scale each channel to [0, 1]; constant channels become 0."""
    if r.data.size == 0:
        raise ValueError("cannot normalize an empty raster")
    lo = r.data.min(axis=(0, 1))
    hi = r.data.max(axis=(0, 1))
    span = hi - lo
    safe = np.where(span > 0, span, 1.0)
    out = (r.data - lo) / safe
    out[:, :, span == 0] = 0.0
    return Raster(out)


def log_transform(r: Raster) -> Raster:
    """Natural log of a strictly positive raster (SAR intensity to a dB-like
    scale, up to a constant factor)."""
    if np.any(r.data <= 0):
        raise ValueError("log transform needs strictly positive values")
    return Raster(np.log(r.data))


INPUT_TRANSFORMS = ("none", "log")


def apply_transform(r: Raster, name: str) -> Raster:
    if name == "none":
        return r
    if name == "log":
        return log_transform(r)
    raise ValueError(f"unknown input transform {name!r}; choose from {INPUT_TRANSFORMS}")


def extract_pairs(x: Raster, y: Raster, train_mask) -> TrainingSet:
    """One training row per true mask pixel, in row-major order."""
    if (x.height, x.width) != (y.height, y.width):
        raise ValueError(f"raster sizes differ: {x.shape[:2]} vs {y.shape[:2]}")
    mask = as_mask(train_mask, x.shape)
    rows, cols = np.nonzero(mask)
    if rows.size == 0:
        raise ValueError("training mask selects no pixels")
    return TrainingSet(
        x.data[rows, cols, :],
        y.data[rows, cols, :],
        np.stack([rows, cols], axis=1),
    )


def _ceil_count(fraction: float, total: int) -> int:
    # round first so that e.g. 0.02 * 100 is not pushed to 3 by representation error
    return math.ceil(round(fraction * total, 9))


def subsample(t: TrainingSet, fraction: float, seed: int) -> TrainingSet:
    """Draw ``ceil(fraction * M)`` rows uniformly without replacement.

    The kept rows are returned in their original order.
    """
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must lie in (0, 1], got {fraction}")
    count = _ceil_count(fraction, t.size)
    if count < 1:
        raise ValueError("fraction selects no rows")
    rng = np.random.default_rng(seed)
    rows = np.sort(rng.choice(t.size, size=count, replace=False))
    return t.take(rows)


def sample_mask(region, fraction_of_image: float, seed: int) -> np.ndarray:
    """Random training mask inside ``region`` holding ``ceil(f * H * W)`` pixels.

    This is how the flood experiment draws its 2% training sets: uniformly
    from pixels known to be unchanged.
    """
    region = as_mask(region)
    if not 0.0 < fraction_of_image <= 1.0:
        raise ValueError(f"fraction must lie in (0, 1], got {fraction_of_image}")
    candidates = np.flatnonzero(region)
    count = min(_ceil_count(fraction_of_image, region.size), candidates.size)
    if count < 1:
        raise ValueError("sampling region is empty")
    rng = np.random.default_rng(seed)
    chosen = rng.choice(candidates, size=count, replace=False)
    out = np.zeros(region.size, dtype=bool)
    out[chosen] = True
    return out.reshape(region.shape)


# ---------------------------------------------------------------- file I/O


def atomic_write_bytes(path, payload: bytes) -> None:
    """Write ``payload`` to ``path`` through a temp file and a rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def encode_raster(r: Raster) -> bytes:
    header = _HEADER.pack(MAGIC, VERSION, r.height, r.width, r.channels)
    return header + r.data.astype("<f4").tobytes(order="C")


def decode_raster(blob: bytes) -> Raster:
    if len(blob) < _HEADER.size:
        raise RasterFormatError("file shorter than the HCDR header")
    magic, version, h, w, c = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise RasterFormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise RasterFormatError(f"unsupported HCDR version {version}")
    expected = h * w * c * 4
    payload = blob[_HEADER.size:]
    if len(payload) < expected:
        raise RasterFormatError(
            f"truncated payload: header declares {h}x{w}x{c} "
            f"({expected} bytes) but only {len(payload)} bytes follow"
        )
    if len(payload) > expected:
        raise RasterFormatError(f"{len(payload) - expected} trailing bytes after payload")
    data = np.frombuffer(payload, dtype="<f4").reshape(h, w, c)
    if not np.all(np.isfinite(data)):
        raise RasterFormatError("raster file contains non-finite values")
    return Raster(data)


def write_raster(r: Raster, path) -> None:
    """Store ``r`` as HCDR. Values are written as float32."""
    atomic_write_bytes(path, encode_raster(r))


def read_raster(path) -> Raster:
    return decode_raster(Path(path).read_bytes())


def write_mask(mask, path) -> None:
    write_raster(Raster(as_mask(mask).astype(np.float64)), path)


def read_mask(path) -> np.ndarray:
    r = read_raster(path)
    if r.channels != 1:
        raise RasterFormatError(f"mask file has {r.channels} channels, expected 1")
    vals = r.data[:, :, 0]
    if not np.all((vals == 0.0) | (vals == 1.0)):
        raise RasterFormatError("mask values must be 0.0 or 1.0")
    return vals == 1.0


def encode_pgm(image) -> bytes:
    """8-bit binary PGM, values in [0, 1] mapped linearly onto 0..255."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 3:
        img = img[:, :, 0]
    levels = np.rint(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    h, w = levels.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + levels.tobytes()


def write_pgm(image, path) -> None:
    atomic_write_bytes(path, encode_pgm(image))
