"""Pure-Python (numpy) kernels; the fallback when the compiled module is absent.

``topk_rows(scores, k, diag_offset=-1)``
    For each row, the column indices of the ``k`` largest scores, ordered by
    score descending and then column index ascending. NaN and -inf entries are
    never selected. With ``diag_offset >= 0`` the column ``row + diag_offset``
    is skipped, which lets callers pass row blocks of a square matrix and
    exclude self-matches. Rows with fewer eligible columns are padded with -1.

``bfs_expand(indptr, indices, seeds, hops)``
    Sorted node indices reachable from ``seeds`` in at most ``hops`` steps over
    the CSR adjacency, seeds included.
"""

from __future__ import annotations

import numpy as np


def topk_rows(scores: np.ndarray, k: int, diag_offset: int = -1) -> np.ndarray:
    if k < 1:
        raise ValueError("k must be >= 1")
    scores = np.asarray(scores, dtype=np.float64)
    nrows, ncols = scores.shape
    out = np.full((nrows, k), -1, dtype=np.int64)
    cols = np.arange(ncols)
    for r in range(nrows):
        row = scores[r]
        ok = ~np.isnan(row) & (row != -np.inf)
        if diag_offset >= 0 and r + diag_offset < ncols:
            ok[r + diag_offset] = False
        cand = cols[ok]
        if cand.size == 0:
            continue
        vals = row[cand]
        if cand.size > k:
            kth = np.partition(vals, cand.size - k)[cand.size - k]
            keep = vals >= kth
            cand, vals = cand[keep], vals[keep]
        order = np.lexsort((cand, -vals))[:k]
        out[r, : order.size] = cand[order]
    return out


def bfs_expand(indptr: np.ndarray, indices: np.ndarray, seeds: np.ndarray, hops: int) -> np.ndarray:
    n = len(indptr) - 1
    visited = set()
    for s in seeds:
        s = int(s)
        if s < 0 or s >= n:
            raise IndexError(s)
        visited.add(s)
    frontier = sorted(visited)
    for _ in range(hops):
        nxt = []
        for i in frontier:
            for j in indices[indptr[i] : indptr[i + 1]]:
                j = int(j)
                if j not in visited:
                    visited.add(j)
                    nxt.append(j)
        if not nxt:
            break
        frontier = nxt
    return np.array(sorted(visited), dtype=np.int64)
