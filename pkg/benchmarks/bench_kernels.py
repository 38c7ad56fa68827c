"""Time the compiled kernels against their numpy fallbacks.

Usage::

    python3 benchmarks/bench_kernels.py [--repeat 5] [--scale 1.0]

Each row reports the best-of-``repeat`` wall time for both back-ends and
checks that their outputs are byte-identical.
"""

import argparse
import time

import numpy as np

from hetcd import _pykernels

try:
    from hetcd import _ckernels
except ImportError:
    _ckernels = None


def best_time(fn, repeat):
    best = float("inf")
    out = None
    for _ in range(repeat):
        start = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - start)
    return best, out


def same(a, b):
    if isinstance(a, tuple):
        return all(same(x, y) for x, y in zip(a, b))
    return a.tobytes() == b.tobytes()


def cases(scale, rng):
    from hetcd.raster import TrainingSet
    from hetcd.regress.rf import RfHyper, rf_fit

    n_train, n_query = int(2000 * scale), int(8192 * scale)
    train = rng.uniform(size=(n_train, 3))
    queries = rng.uniform(size=(n_query, 3))
    yield "knn K=16", lambda mod: mod.knn(train, queries, 16)
    yield "knn K=300", lambda mod: mod.knn(train, queries, 300)

    x = rng.uniform(size=(n_train, 7))
    forest = rf_fit(TrainingSet(x, np.sin(x[:, :3])), RfHyper(trees=128), seed=0)
    fq = rng.uniform(size=(n_query, 7))
    args = (forest.feature, forest.threshold, forest.left, forest.right, forest.value, forest.roots, fq)
    yield "forest_predict T=128", lambda mod: mod.forest_predict(*args)

    side = int(512 * scale ** 0.5)
    img = rng.uniform(size=(side, side))
    yield f"median3 {side}x{side}", lambda mod: mod.median3(img)


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--scale", type=float, default=1.0, help="problem size multiplier")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)
    if _ckernels is None:
        raise SystemExit("compiled extension not built; run `pip install -e . --no-build-isolation`")

    rng = np.random.default_rng(args.seed)
    print(f"{'kernel':<24}{'cython [s]':>12}{'python [s]':>12}{'speed-up':>10}  identical")
    for name, run in cases(args.scale, rng):
        tc, oc = best_time(lambda: run(_ckernels), args.repeat)
        tp, op = best_time(lambda: run(_pykernels), args.repeat)
        print(f"{name:<24}{tc:>12.4f}{tp:>12.4f}{tp / tc:>9.1f}x  {same(oc, op)}")


if __name__ == "__main__":
    main()
