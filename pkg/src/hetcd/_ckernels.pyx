# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops. Every routine here has a numpy twin in ``_pykernels``
that produces bit-identical output; keep the floating-point operation order in
sync when editing either side."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt

cnp.import_array()


cdef inline bint _worse(double da, Py_ssize_t ia, double db, Py_ssize_t ib) noexcept nogil:
    # (da, ia) ranks after (db, ib)
    return da > db or (da == db and ia > ib)


cdef void _sift_down(double* hd, Py_ssize_t* hi, Py_ssize_t start, Py_ssize_t n) noexcept nogil:
    # max-heap on (distance, index)
    cdef Py_ssize_t root = start, child, swap
    cdef double td
    cdef Py_ssize_t ti
    while True:
        child = 2 * root + 1
        if child >= n:
            return
        swap = root
        if _worse(hd[child], hi[child], hd[swap], hi[swap]):
            swap = child
        if child + 1 < n and _worse(hd[child + 1], hi[child + 1], hd[swap], hi[swap]):
            swap = child + 1
        if swap == root:
            return
        td = hd[root]; hd[root] = hd[swap]; hd[swap] = td
        ti = hi[root]; hi[root] = hi[swap]; hi[swap] = ti
        root = swap


def knn(const double[:, ::1] train, const double[:, ::1] queries, Py_ssize_t k):
    """Exact K nearest training rows for every query row.

    Returns ``(indices, distances)``, both ``(N, k)``, ordered by ascending
    distance with ties going to the lower training index.
    """
    cdef Py_ssize_t m = train.shape[0], p = train.shape[1], n = queries.shape[0]
    if k < 1 or k > m:
        raise ValueError(f"k must be in [1, {m}], got {k}")
    if queries.shape[1] != p:
        raise ValueError("query and training dimensions differ")
    idx_arr = np.empty((n, k), dtype=np.intp)
    dist_arr = np.empty((n, k), dtype=np.float64)
    cdef Py_ssize_t[:, ::1] idx = idx_arr
    cdef double[:, ::1] dist = dist_arr
    cdef double[::1] hd = np.empty(k, dtype=np.float64)
    cdef Py_ssize_t[::1] hi = np.empty(k, dtype=np.intp)
    cdef Py_ssize_t q, j, c, s, filled, end
    cdef double acc, diff, td
    cdef Py_ssize_t ti
    with nogil:
        for q in range(n):
            filled = 0
            for j in range(m):
                acc = 0.0
                for c in range(p):
                    diff = queries[q, c] - train[j, c]
                    acc = acc + diff * diff
                if filled < k:
                    hd[filled] = acc
                    hi[filled] = j
                    filled += 1
                    if filled == k:
                        s = k // 2
                        while s > 0:
                            s -= 1
                            _sift_down(&hd[0], &hi[0], s, k)
                elif _worse(hd[0], hi[0], acc, j):
                    hd[0] = acc
                    hi[0] = j
                    _sift_down(&hd[0], &hi[0], 0, k)
            # heap sort in place: ascending (distance, index)
            end = k
            while end > 1:
                end -= 1
                td = hd[0]; hd[0] = hd[end]; hd[end] = td
                ti = hi[0]; hi[0] = hi[end]; hi[end] = ti
                _sift_down(&hd[0], &hi[0], 0, end)
            for j in range(k):
                idx[q, j] = hi[j]
                dist[q, j] = sqrt(hd[j])
    return idx_arr, dist_arr


def forest_predict(const int[::1] feature, const double[::1] threshold,
                   const int[::1] left, const int[::1] right,
                   const double[:, ::1] value, const Py_ssize_t[::1] roots,
                   const double[:, ::1] x):
    """Average of per-tree leaf payloads, trees summed in index order."""
    cdef Py_ssize_t n = x.shape[0], q = value.shape[1], t_count = roots.shape[0]
    out_arr = np.zeros((n, q), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, t, c, node
    cdef int f
    cdef double denom = <double>t_count
    with nogil:
        for i in range(n):
            for t in range(t_count):
                node = roots[t]
                f = feature[node]
                while f >= 0:
                    if x[i, f] <= threshold[node]:
                        node = left[node]
                    else:
                        node = right[node]
                    f = feature[node]
                for c in range(q):
                    out[i, c] = out[i, c] + value[node, c]
            for c in range(q):
                out[i, c] = out[i, c] / denom
    return out_arr


def median3(const double[:, ::1] img):
    """3x3 median with edge-truncated windows; even-sized windows take the
    lower middle value so outputs always come from the input."""
    cdef Py_ssize_t h = img.shape[0], w = img.shape[1]
    out_arr = np.empty((h, w), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double buf[9]
    cdef Py_ssize_t r, c, dr, dc, rr, cc, n, a, b
    cdef double v
    with nogil:
        for r in range(h):
            for c in range(w):
                n = 0
                for dr in range(-1, 2):
                    rr = r + dr
                    if rr < 0 or rr >= h:
                        continue
                    for dc in range(-1, 2):
                        cc = c + dc
                        if cc < 0 or cc >= w:
                            continue
                        v = img[rr, cc]
                        a = n
                        while a > 0 and buf[a - 1] > v:
                            buf[a] = buf[a - 1]
                            a -= 1
                        buf[a] = v
                        n += 1
                b = (n - 1) // 2
                out[r, c] = buf[b]
    return out_arr
