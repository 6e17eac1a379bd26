# cython: language_level=3, boundscheck=False, wraparound=False, initializedcheck=False, cdivision=True
"""Compiled selection and traversal kernels.

Same contract as :mod:`sentgraph._pykernels`; see there for semantics.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport isnan, INFINITY

cnp.import_array()


def topk_rows(const double[:, ::1] scores, Py_ssize_t k, Py_ssize_t diag_offset=-1):
    cdef Py_ssize_t nrows = scores.shape[0]
    cdef Py_ssize_t ncols = scores.shape[1]
    cdef Py_ssize_t r, c, m, pos, filled, skip
    cdef double s
    if k < 1:
        raise ValueError("k must be >= 1")
    out_arr = np.full((nrows, k), -1, dtype=np.int64)
    cdef cnp.int64_t[:, ::1] out = out_arr
    cdef double[::1] best = np.empty(k, dtype=np.float64)
    with nogil:
        for r in range(nrows):
            filled = 0
            skip = r + diag_offset if diag_offset >= 0 else -1
            for c in range(ncols):
                if c == skip:
                    continue
                s = scores[r, c]
                if isnan(s) or s == -INFINITY:
                    continue
                if filled == k and s <= best[k - 1]:
                    continue
                # insertion point: after every kept entry with score >= s
                pos = filled if filled < k else k - 1
                while pos > 0 and best[pos - 1] < s:
                    pos -= 1
                m = filled if filled < k else k - 1
                while m > pos:
                    best[m] = best[m - 1]
                    out[r, m] = out[r, m - 1]
                    m -= 1
                best[pos] = s
                out[r, pos] = c
                if filled < k:
                    filled += 1
    return out_arr


def bfs_expand(const cnp.int64_t[::1] indptr, const cnp.int64_t[::1] indices,
               const cnp.int64_t[::1] seeds, Py_ssize_t hops):
    cdef Py_ssize_t n = indptr.shape[0] - 1
    cdef Py_ssize_t i, j, e, level, head, tail, nxt_tail
    visited_arr = np.zeros(n, dtype=np.uint8)
    cdef cnp.uint8_t[::1] visited = visited_arr
    cdef cnp.int64_t[::1] queue = np.empty(n, dtype=np.int64)
    tail = 0
    for i in range(seeds.shape[0]):
        j = seeds[i]
        if j < 0 or j >= n:
            raise IndexError(j)
        if not visited[j]:
            visited[j] = 1
            queue[tail] = j
            tail += 1
    head = 0
    with nogil:
        for level in range(hops):
            nxt_tail = tail
            while head < tail:
                i = queue[head]
                head += 1
                for e in range(indptr[i], indptr[i + 1]):
                    j = indices[e]
                    if not visited[j]:
                        visited[j] = 1
                        queue[nxt_tail] = j
                        nxt_tail += 1
            if nxt_tail == tail:
                break
            tail = nxt_tail
    return np.flatnonzero(visited_arr).astype(np.int64)
