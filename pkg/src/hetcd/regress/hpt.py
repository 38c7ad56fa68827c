"""Homogeneous pixel transformation: K-nearest-neighbour kernel regression.

For each query the K closest training inputs are found by exhaustive scan,
their distances are normalised (per query, or by the largest distance seen in
the whole prediction batch) and the neighbours' targets are combined with
weights ``exp(-gamma * d)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import kernels
from .._parallel import map_ordered, CHUNK_ROWS

DISTANCE_NORMS = ("relative", "absolute")


@dataclass(frozen=True)
class HptHyper:
    neighbours: int = 300
    kernel_width: float = 100.0
    distance_norm: str = "absolute"
    weight_norm: bool = True

    def __post_init__(self):
        if self.neighbours < 1:
            raise ValueError("neighbours K must be >= 1")
        if self.kernel_width < 0:
            raise ValueError("kernel_width gamma must be >= 0")
        if self.distance_norm not in DISTANCE_NORMS:
            raise ValueError(f"distance_norm must be one of {DISTANCE_NORMS}")


def normalize_distances(d, mode: str = "relative", global_max: float | None = None) -> np.ndarray:
    """Scale neighbour distances into [0, 1].

    ``d`` holds one query's distances (1-D) or one row per query (2-D).
    ``relative`` divides each row by its own maximum; ``absolute`` divides by
    ``global_max`` (the largest distance in the batch when omitted). A zero
    denominator yields zeros.
    """
    d = np.asarray(d, dtype=np.float64)
    if mode == "relative":
        denom = d.max(axis=-1, keepdims=True)
    elif mode == "absolute":
        denom = np.float64(d.max() if global_max is None else global_max)
    else:
        raise ValueError(f"unknown distance normalisation {mode!r}")
    safe = np.where(denom > 0, denom, 1.0)
    return np.where(denom > 0, d / safe, 0.0)


def combine(indices, normalized, targets, gamma, weight_norm=True) -> np.ndarray:
    """Weighted sum of neighbour targets, accumulated in neighbour order.

    With ``weight_norm`` the exponent is shifted by each row's smallest
    normalised distance; the shift cancels in the normalisation and keeps
    large ``gamma`` from underflowing every weight to zero.
    """
    indices = np.atleast_2d(indices)
    normalized = np.atleast_2d(normalized)
    if weight_norm:
        w = np.exp(-gamma * (normalized - normalized.min(axis=1, keepdims=True)))
    else:
        w = np.exp(-gamma * normalized)
    acc = np.zeros((indices.shape[0], targets.shape[1]))
    total = np.zeros(indices.shape[0])
    for k in range(indices.shape[1]):
        acc += w[:, k, None] * targets[indices[:, k]]
        total += w[:, k]
    if weight_norm:
        acc /= total[:, None]
    return acc


@dataclass
class HptModel:
    """Lazy learner: keeps the whole training set."""

    inputs: np.ndarray
    targets: np.ndarray
    hyper: HptHyper
    method: str = "hpt"

    @property
    def input_dim(self) -> int:
        return self.inputs.shape[1]

    @property
    def output_dim(self) -> int:
        return self.targets.shape[1]

    def neighbours(self, xs, workers=None):
        """``(indices, distances)`` of the K nearest training rows per query."""
        xs = np.ascontiguousarray(np.atleast_2d(xs), dtype=np.float64)
        if xs.shape[1] != self.input_dim:
            raise ValueError(f"expected {self.input_dim} input channels, got {xs.shape[1]}")
        k = self.hyper.neighbours
        blocks = [xs[i:i + CHUNK_ROWS] for i in range(0, xs.shape[0], CHUNK_ROWS)]
        found = map_ordered(lambda b: kernels.knn(self.inputs, b, k), blocks, workers)
        if not found:
            return np.empty((0, k), dtype=np.intp), np.empty((0, k))
        return (np.concatenate([f[0] for f in found]),
                np.concatenate([f[1] for f in found]))

    def predict_details(self, xs, workers=None):
        """Prediction plus the distance scale used (batch max in absolute mode)."""
        h = self.hyper
        idx, dist = self.neighbours(xs, workers)
        if h.distance_norm == "absolute":
            scale = float(dist.max()) if dist.size else 0.0
            dn = normalize_distances(dist, "absolute", scale)
        else:
            scale = None
            dn = normalize_distances(dist, "relative")
        return combine(idx, dn, self.targets, h.kernel_width, h.weight_norm), scale

    def predict(self, xs, workers=None):
        return self.predict_details(xs, workers)[0]

    def state(self):
        h = self.hyper
        return {
            "inputs": self.inputs,
            "targets": self.targets,
            "params": np.array([h.neighbours, h.kernel_width,
                                DISTANCE_NORMS.index(h.distance_norm), float(h.weight_norm)]),
        }

    @classmethod
    def from_state(cls, s):
        k, gamma, norm, wn = s["params"]
        hyper = HptHyper(int(k), float(gamma), DISTANCE_NORMS[int(norm)], bool(wn))
        return cls(inputs=s["inputs"], targets=s["targets"], hyper=hyper)


def knn(x, model: HptModel):
    """K nearest training rows of a single query: ``(indices, distances)``."""
    idx, dist = model.neighbours(np.asarray(x, dtype=np.float64)[None, :])
    return idx[0], dist[0]


def hpt_fit(t, h: HptHyper = HptHyper()) -> HptModel:
    if h.neighbours > t.size:
        raise ValueError(f"K={h.neighbours} neighbours requested but only {t.size} training rows")
    return HptModel(inputs=np.ascontiguousarray(t.inputs), targets=np.ascontiguousarray(t.targets),
                    hyper=h)


def hpt_predict(x, model: HptModel) -> np.ndarray:
    return model.predict(np.asarray(x, dtype=np.float64)[None, :])[0]
