"""Pure numpy versions of the compiled kernels in ``_ckernels``.

Operation order mirrors the compiled code so both paths agree bit for bit.
"""

import numpy as np

# queries per block in knn; bounds the (block, M) distance buffer
_KNN_BLOCK = 256


def knn(train, queries, k):
    train = np.ascontiguousarray(train, dtype=np.float64)
    queries = np.ascontiguousarray(queries, dtype=np.float64)
    m, p = train.shape
    if k < 1 or k > m:
        raise ValueError(f"k must be in [1, {m}], got {k}")
    if queries.shape[1] != p:
        raise ValueError("query and training dimensions differ")
    n = queries.shape[0]
    idx = np.empty((n, k), dtype=np.intp)
    dist = np.empty((n, k), dtype=np.float64)
    for start in range(0, n, _KNN_BLOCK):
        q = queries[start:start + _KNN_BLOCK]
        sq = np.zeros((q.shape[0], m))
        for c in range(p):
            diff = q[:, c, None] - train[None, :, c]
            sq += diff * diff
        # stable sort keeps the lower index first among equal distances
        order = np.argsort(sq, axis=1, kind="stable")[:, :k]
        idx[start:start + q.shape[0]] = order
        dist[start:start + q.shape[0]] = np.sqrt(np.take_along_axis(sq, order, axis=1))
    return idx, dist


def forest_apply(feature, threshold, left, right, root, x):
    """Leaf node id reached by each row of ``x`` in the tree rooted at ``root``."""
    node = np.full(x.shape[0], root, dtype=np.intp)
    rows = np.arange(x.shape[0])
    f = feature[node]
    active = f >= 0
    while active.any():
        r = rows[active]
        nd = node[active]
        go_left = x[r, f[active]] <= threshold[nd]
        node[active] = np.where(go_left, left[nd], right[nd])
        f = feature[node]
        active = f >= 0
    return node


def forest_predict(feature, threshold, left, right, value, roots, x):
    x = np.ascontiguousarray(x, dtype=np.float64)
    out = np.zeros((x.shape[0], value.shape[1]))
    for root in roots:
        out += value[forest_apply(feature, threshold, left, right, root, x)]
    return out / float(len(roots))


def median3(img):
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape
    padded = np.full((h + 2, w + 2), np.nan)
    padded[1:-1, 1:-1] = img
    stack = np.stack(
        [padded[dr:dr + h, dc:dc + w] for dr in range(3) for dc in range(3)],
        axis=-1,
    )
    count = np.sum(~np.isnan(stack), axis=-1)
    stack.sort(axis=-1)  # NaN sorts last
    pick = ((count - 1) // 2)[..., None]
    return np.take_along_axis(stack, pick, axis=-1)[..., 0]
