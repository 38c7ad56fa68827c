"""Thread fan-out helpers. Chunk boundaries never depend on the worker count,
so results are identical for any ``HCD_THREADS`` value."""

import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

CHUNK_ROWS = 4096


def worker_count(workers=None) -> int:
    """Explicit ``workers`` wins, then ``HCD_THREADS``, then the CPU count."""
    if workers is None:
        env = os.environ.get("HCD_THREADS")
        workers = int(env) if env else (os.cpu_count() or 1)
    return max(1, int(workers))


def map_ordered(fn, items, workers=None):
    """``[fn(i) for i in items]`` evaluated on a thread pool, order preserved."""
    items = list(items)
    n = worker_count(workers)
    if n == 1 or len(items) <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=min(n, len(items))) as pool:
        return list(pool.map(fn, items))


def map_rows(fn, x, workers=None, chunk=CHUNK_ROWS):
    """Apply ``fn`` to fixed-size row blocks of ``x`` and stack the results."""
    x = np.asarray(x)
    blocks = [x[i:i + chunk] for i in range(0, max(x.shape[0], 1), chunk)]
    return np.concatenate(map_ordered(fn, blocks, workers), axis=0)
