"""Uniform fit/predict front end over the four regression back-ends.

Every fitted model exposes ``method``, ``input_dim``, ``output_dim`` and
``predict(xs, workers=None)`` mapping ``(N, input_dim)`` to
``(N, output_dim)``.

Models serialise to an ``HCDM`` blob::

    b"HCDM" | u32 version=1 | u8 method tag | u32 input_dim | u32 output_dim
    | u64 payload length | payload (numpy .npz archive, no pickles)
"""

from __future__ import annotations

import dataclasses
import io
import struct
from dataclasses import dataclass

import numpy as np

from ..raster import Raster, atomic_write_bytes
from .gp import GpHyper, GpModel, gp_fit
from .hpt import HptHyper, HptModel, hpt_fit
from .rf import RfHyper, RfModel, rf_fit
from .svr import SvrHyper, SvrModel, svr_fit

METHODS = ("gp", "svr", "rf", "hpt")
HYPER_TYPES = {"gp": GpHyper, "svr": SvrHyper, "rf": RfHyper, "hpt": HptHyper}
MODEL_TYPES = {"gp": GpModel, "svr": SvrModel, "rf": RfModel, "hpt": HptModel}

MODEL_MAGIC = b"HCDM"
MODEL_VERSION = 1
_MODEL_HEADER = struct.Struct("<4sIBIIQ")


class ModelFormatError(ValueError):
    pass


@dataclass(frozen=True)
class RegressorSpec:
    """Back-end choice, its hyperparameters and the seed for every random stage."""

    method: str
    hyper: object = None
    seed: int = 0

    def __post_init__(self):
        method = self.method.lower()
        if method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; choose from {METHODS}")
        object.__setattr__(self, "method", method)
        hyper = self.hyper if self.hyper is not None else HYPER_TYPES[method]()
        if isinstance(hyper, dict):
            hyper = HYPER_TYPES[method](**hyper)
        if not isinstance(hyper, HYPER_TYPES[method]):
            raise TypeError(f"{method} expects {HYPER_TYPES[method].__name__}, got {type(hyper).__name__}")
        object.__setattr__(self, "hyper", hyper)

    def to_dict(self) -> dict:
        return {"method": self.method, "seed": self.seed, "hyper": hyper_to_dict(self.hyper)}

    @classmethod
    def from_dict(cls, d: dict) -> "RegressorSpec":
        return cls(d["method"], d.get("hyper") or None, int(d.get("seed", 0)))

    def replace(self, **changes) -> "RegressorSpec":
        return dataclasses.replace(self, **changes)


def hyper_to_dict(hyper) -> dict:
    out = dataclasses.asdict(hyper)
    return {k: list(v) if isinstance(v, tuple) else v for k, v in out.items()}


def fit(spec: RegressorSpec, t, workers=None):
    """Fit the back-end named by ``spec`` on training set ``t``."""
    if spec.method == "gp":
        return gp_fit(t, spec.hyper, seed=spec.seed)
    if spec.method == "svr":
        return svr_fit(t, spec.hyper)
    if spec.method == "rf":
        return rf_fit(t, spec.hyper, seed=spec.seed, workers=workers)
    return hpt_fit(t, spec.hyper)


def predict_raster(model, r: Raster, workers=None) -> Raster:
    """Apply ``model`` to every pixel vector of ``r``."""
    if r.channels != model.input_dim:
        raise ValueError(f"raster has {r.channels} channels but the model expects {model.input_dim}")
    out = model.predict(r.pixels(), workers=workers)
    return Raster(out.reshape(r.height, r.width, model.output_dim))


def dumps_model(model) -> bytes:
    buf = io.BytesIO()
    np.savez(buf, **model.state())
    payload = buf.getvalue()
    header = _MODEL_HEADER.pack(MODEL_MAGIC, MODEL_VERSION, METHODS.index(model.method),
                                model.input_dim, model.output_dim, len(payload))
    return header + payload


def loads_model(blob: bytes):
    if len(blob) < _MODEL_HEADER.size:
        raise ModelFormatError("blob shorter than the HCDM header")
    magic, version, tag, p, q, length = _MODEL_HEADER.unpack_from(blob)
    if magic != MODEL_MAGIC:
        raise ModelFormatError(f"bad magic {magic!r}")
    if version != MODEL_VERSION:
        raise ModelFormatError(f"unsupported model version {version}")
    if tag >= len(METHODS):
        raise ModelFormatError(f"unknown method tag {tag}")
    payload = blob[_MODEL_HEADER.size:]
    if len(payload) != length:
        raise ModelFormatError(f"payload is {len(payload)} bytes, header says {length}")
    with np.load(io.BytesIO(payload), allow_pickle=False) as arrays:
        state = {k: arrays[k] for k in arrays.files}
    model = MODEL_TYPES[METHODS[tag]].from_state(state)
    if (model.input_dim, model.output_dim) != (p, q):
        raise ModelFormatError("model dimensions disagree with the header")
    return model


def save_model(model, path) -> None:
    atomic_write_bytes(path, dumps_model(model))


def load_model(path):
    with open(path, "rb") as fh:
        return loads_model(fh.read())


__all__ = [
    "METHODS", "RegressorSpec", "fit", "predict_raster", "dumps_model", "loads_model",
    "save_model", "load_model", "hyper_to_dict",
    "GpHyper", "SvrHyper", "RfHyper", "HptHyper",
]
