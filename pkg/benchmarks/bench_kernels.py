"""Compare the compiled and numpy kernel backends on KNN selection and hop expansion.

    python benchmarks/bench_kernels.py [--n 4000] [--dim 384] [--k 3] [--repeat 5]

Both backends must return identical arrays; the script exits nonzero otherwise.
"""

from __future__ import annotations

import argparse
import statistics
import sys
import time

import numpy as np

from sentgraph.embedding import quantize
from sentgraph.kernels import backends


def _time(fn, repeat):
    runs = []
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        runs.append(time.perf_counter() - t0)
    return statistics.median(runs), out


def _csr(knn: np.ndarray):
    n = knn.shape[0]
    src = np.repeat(np.arange(n), knn.shape[1])
    dst = knn.ravel()
    keep = dst >= 0
    fwd = np.stack([src[keep], dst[keep]], 1)
    pairs = np.unique(np.concatenate([fwd, fwd[:, ::-1]]), axis=0)
    indptr = np.concatenate([[0], np.cumsum(np.bincount(pairs[:, 0], minlength=n))]).astype(np.int64)
    return indptr, np.ascontiguousarray(pairs[:, 1], dtype=np.int64)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=4000, help="sentences")
    ap.add_argument("--dim", type=int, default=384)
    ap.add_argument("--k", type=int, default=3)
    ap.add_argument("--hops", type=int, default=2)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    rng = np.random.default_rng(args.seed)
    vecs = quantize(rng.standard_normal((args.n, args.dim)))
    sims = np.ascontiguousarray(vecs.astype(np.float64) @ vecs.T.astype(np.float64))
    seeds = np.sort(rng.choice(args.n, size=15, replace=False)).astype(np.int64)

    impls = backends()
    if "cython" not in impls:
        print("compiled backend not built; only the numpy backend is available", file=sys.stderr)
    results = {}
    print(f"n={args.n} dim={args.dim} k={args.k} hops={args.hops} repeat={args.repeat}")
    print(f"{'backend':<8} {'topk_rows (s)':>14} {'bfs_expand (ms)':>16}")
    for name, mod in impls.items():
        t_knn, knn = _time(lambda: mod.topk_rows(sims, args.k, 0), args.repeat)
        indptr, indices = _csr(knn)
        t_bfs, reach = _time(lambda: mod.bfs_expand(indptr, indices, seeds, args.hops), args.repeat)
        results[name] = (t_knn, t_bfs, knn, reach)
        print(f"{name:<8} {t_knn:>14.4f} {t_bfs * 1e3:>16.3f}")

    if len(results) == 2:
        (pk, pb, pknn, preach), (ck, cb, cknn, creach) = results["python"], results["cython"]
        if not (np.array_equal(pknn, cknn) and np.array_equal(preach, creach)):
            print("backends disagree", file=sys.stderr)
            return 1
        print(f"speedup  {pk / ck:>14.1f}x {pb / cb:>15.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
