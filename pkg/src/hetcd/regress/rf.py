"""Multi-output random-forest regression.

Each tree is grown on a bootstrap sample with ``m`` candidate input features
per node; a node splits only when both children keep at least ``min_leaf``
rows. Leaves store the mean target vector of their rows and the forest
prediction is the average over trees.

Trees are stored flat (one array per node attribute, concatenated over the
forest) so that prediction can run in the compiled kernel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .. import kernels
from .._parallel import map_ordered, map_rows

SPLIT_STRATEGIES = ("variance_best", "random_threshold")


def default_m(p: int, rule: str = "third") -> int:
    """Features per node: ``floor(log2 P)`` or ``floor(P / 3)``, at least 1."""
    if p < 1:
        raise ValueError("P must be >= 1")
    if rule == "log2":
        m = int(math.floor(math.log2(p)))
    elif rule == "third":
        m = p // 3
    else:
        raise ValueError(f"unknown feature rule {rule!r}")
    return max(1, m)


@dataclass(frozen=True)
class RfHyper:
    """Forest settings. ``features_per_node=None`` applies ``feature_rule`` to
    the input dimension at fit time."""

    trees: int = 128
    features_per_node: int | None = None
    feature_rule: str = "third"
    min_leaf: int = 5
    split_strategy: str = "variance_best"
    bootstrap: bool = True

    def __post_init__(self):
        if self.trees < 1:
            raise ValueError("trees must be >= 1")
        if self.min_leaf < 1:
            raise ValueError("min_leaf must be >= 1")
        if self.features_per_node is not None and self.features_per_node < 1:
            raise ValueError("features_per_node must be >= 1")
        if self.split_strategy not in SPLIT_STRATEGIES:
            raise ValueError(f"split_strategy must be one of {SPLIT_STRATEGIES}")

    def resolve_m(self, p: int) -> int:
        m = self.features_per_node if self.features_per_node is not None else default_m(p, self.feature_rule)
        if m > p:
            raise ValueError(f"features_per_node={m} exceeds the input dimension {p}")
        return m


def _best_variance_split(xs, ys, min_leaf):
    """Best threshold on one feature, or None. Returns (sse, threshold)."""
    n = xs.size
    order = np.argsort(xs, kind="stable")
    xs = xs[order]
    ys = ys[order]
    s1 = np.cumsum(ys, axis=0)
    s2 = np.cumsum(ys * ys, axis=0)
    # split after position i: left = [0, i], right = [i + 1, n)
    i = np.arange(min_leaf - 1, n - min_leaf)
    i = i[xs[i] < xs[i + 1]]
    if i.size == 0:
        return None
    n_left = (i + 1).astype(np.float64)[:, None]
    n_right = (n - i - 1).astype(np.float64)[:, None]
    left1, left2 = s1[i], s2[i]
    right1, right2 = s1[-1] - left1, s2[-1] - left2
    sse = np.sum(left2 - left1 * left1 / n_left, axis=1) + np.sum(right2 - right1 * right1 / n_right, axis=1)
    j = int(np.argmin(sse))
    lo, hi = xs[i[j]], xs[i[j] + 1]
    thr = 0.5 * (lo + hi)
    if not thr < hi:
        thr = lo
    return float(sse[j]), float(thr)


def _sse_at(xs, ys, thr):
    left = xs <= thr
    total = 0.0
    for part in (ys[left], ys[~left]):
        total += float(np.sum((part - part.mean(axis=0)) ** 2))
    return total


def _random_split(xs, ys, min_leaf, rng):
    srt = np.sort(xs)
    lo, hi = srt[min_leaf - 1], srt[xs.size - min_leaf]
    u = rng.random()
    if not lo < hi:
        return None
    thr = lo + u * (hi - lo)
    if not thr < hi:
        thr = lo
    return _sse_at(xs, ys, thr), float(thr)


class _TreeBuilder:
    def __init__(self, x, y, m, min_leaf, strategy, rng):
        self.x, self.y = x, y
        self.m, self.min_leaf = m, min_leaf
        self.strategy = strategy
        self.rng = rng
        self.feature, self.threshold = [], []
        self.left, self.right = [], []
        self.value, self.count = [], []

    def _new_node(self, rows):
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(self.y[rows].mean(axis=0))
        self.count.append(rows.size)
        return len(self.feature) - 1

    def _choose_split(self, rows):
        ys = self.y[rows]
        if rows.size < 2 * self.min_leaf or np.all(ys == ys[0]):
            return None
        ys = ys - ys.mean(axis=0)
        p = self.x.shape[1]
        perm = self.rng.permutation(p)
        best = None
        # draw m features; if none of them can split, keep drawing
        for start in range(0, p, self.m):
            for f in np.sort(perm[start:start + self.m]):
                xs = self.x[rows, f]
                if self.strategy == "variance_best":
                    found = _best_variance_split(xs, ys, self.min_leaf)
                else:
                    found = _random_split(xs, ys, self.min_leaf, self.rng)
                if found is None:
                    continue
                if best is None or found[0] < best[0] or (found[0] == best[0] and f < best[1]):
                    best = (found[0], int(f), found[1])
            if best is not None:
                return best[1], best[2]
        return None

    def build(self, rows):
        root = self._new_node(rows)
        stack = [(root, rows)]
        while stack:
            node, node_rows = stack.pop()
            split = self._choose_split(node_rows)
            if split is None:
                continue
            f, thr = split
            go_left = self.x[node_rows, f] <= thr
            left_rows, right_rows = node_rows[go_left], node_rows[~go_left]
            self.feature[node] = f
            self.threshold[node] = thr
            li = self._new_node(left_rows)
            ri = self._new_node(right_rows)
            self.left[node], self.right[node] = li, ri
            # right pushed first so the left subtree is numbered first
            stack.append((ri, right_rows))
            stack.append((li, left_rows))
        return (
            np.asarray(self.feature, dtype=np.intc),
            np.asarray(self.threshold, dtype=np.float64),
            np.asarray(self.left, dtype=np.intc),
            np.asarray(self.right, dtype=np.intc),
            np.asarray(self.value, dtype=np.float64).reshape(len(self.value), -1),
            np.asarray(self.count, dtype=np.int64),
        )


@dataclass
class RfModel:
    """Flat forest. Child indices are global; ``roots[t]`` is tree ``t``'s root
    and ``in_bag[t, i]`` counts how often training row ``i`` was drawn."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    count: np.ndarray
    roots: np.ndarray
    in_bag: np.ndarray
    input_dim: int
    method: str = "rf"

    @property
    def output_dim(self) -> int:
        return self.value.shape[1]

    @property
    def n_trees(self) -> int:
        return self.roots.size

    def predict(self, xs, workers=None):
        xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
        if xs.shape[1] != self.input_dim:
            raise ValueError(f"expected {self.input_dim} input channels, got {xs.shape[1]}")

        def block(b):
            return kernels.forest_predict(self.feature, self.threshold, self.left, self.right,
                                          self.value, self.roots, np.ascontiguousarray(b))
        return map_rows(block, xs, workers)

    def apply(self, tree: int, xs) -> np.ndarray:
        """Leaf node ids reached in ``tree``."""
        xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
        return kernels.forest_apply(self.feature, self.threshold, self.left, self.right,
                                    self.roots[tree], xs)

    def tree_predict(self, tree: int, xs) -> np.ndarray:
        return self.value[self.apply(tree, xs)]

    def tree_nodes(self, tree: int) -> np.ndarray:
        end = self.roots[tree + 1] if tree + 1 < self.n_trees else self.feature.size
        return np.arange(self.roots[tree], end)

    def state(self):
        return {name: getattr(self, name) for name in
                ("feature", "threshold", "left", "right", "value", "count", "roots", "in_bag")} | {
            "input_dim": np.array([self.input_dim])}

    @classmethod
    def from_state(cls, s):
        return cls(
            feature=s["feature"].astype(np.intc), threshold=s["threshold"],
            left=s["left"].astype(np.intc), right=s["right"].astype(np.intc),
            value=s["value"], count=s["count"], roots=s["roots"].astype(np.intp),
            in_bag=s["in_bag"], input_dim=int(s["input_dim"][0]),
        )


def rf_fit(t, h: RfHyper = RfHyper(), seed: int = 0, workers=None) -> RfModel:
    """Grow ``h.trees`` trees. Tree ``i`` draws from its own child of the seed,
    so the forest is identical for any worker count."""
    x, y = t.inputs, t.targets
    n = x.shape[0]
    m = h.resolve_m(x.shape[1])
    streams = np.random.SeedSequence(seed).spawn(h.trees)

    def grow(i):
        rng = np.random.default_rng(streams[i])
        if h.bootstrap:
            counts = np.bincount(rng.integers(0, n, size=n), minlength=n)
        else:
            counts = np.ones(n, dtype=np.int64)
        rows = np.repeat(np.arange(n), counts)
        builder = _TreeBuilder(x, y, m, h.min_leaf, h.split_strategy, rng)
        return builder.build(rows), counts

    grown = map_ordered(grow, range(h.trees), workers)
    sizes = [g[0][0].size for g in grown]
    offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(np.intp)
    parts = list(zip(*[g[0] for g in grown]))
    left = np.concatenate([np.where(lf >= 0, lf + off, -1) for lf, off in zip(parts[2], offsets)])
    right = np.concatenate([np.where(rt >= 0, rt + off, -1) for rt, off in zip(parts[3], offsets)])
    return RfModel(
        feature=np.concatenate(parts[0]).astype(np.intc),
        threshold=np.concatenate(parts[1]),
        left=left.astype(np.intc),
        right=right.astype(np.intc),
        value=np.ascontiguousarray(np.concatenate(parts[4])),
        count=np.concatenate(parts[5]),
        roots=offsets,
        in_bag=np.stack([g[1] for g in grown]).astype(np.int32),
        input_dim=x.shape[1],
    )


def rf_predict(model: RfModel, x) -> np.ndarray:
    return model.predict(np.asarray(x, dtype=np.float64)[None, :])[0]


def oob_fraction(model: RfModel) -> np.ndarray:
    """Per tree, the share of training rows left out of its bootstrap."""
    return np.mean(model.in_bag == 0, axis=1)


def oob_error(model: RfModel, t):
    """Mean squared Euclidean out-of-bag error, or None if every row was in
    every bootstrap."""
    x, y = t.inputs, t.targets
    if model.in_bag.shape[1] != x.shape[0]:
        raise ValueError("training set does not match the forest's bootstrap bookkeeping")
    sums = np.zeros_like(y)
    hits = np.zeros(x.shape[0])
    for tree in range(model.n_trees):
        out = model.in_bag[tree] == 0
        if not out.any():
            continue
        sums[out] += model.tree_predict(tree, x[out])
        hits[out] += 1
    used = hits > 0
    if not used.any():
        return None
    pred = sums[used] / hits[used, None]
    err = y[used] - pred
    return float(np.mean(np.sum(err * err, axis=1)))
