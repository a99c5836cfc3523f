#!/usr/bin/env python3
"""Time the compiled kernel core against the pure-numpy fallback.

Covers the two hot paths: dense window-tier attention (decode shapes, growing
key counts) and index-gathered per-head sparse attention (growing selected
sets out of a large archive). Usage: python benchmarks/bench_backends.py
"""

import time

import numpy as np

from tierkv import backends


def best_of(fn, repeats=5, inner=10):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        for _ in range(inner):
            fn()
        best = min(best, (time.perf_counter() - t0) / inner)
    return best


def bench_dense(names, heads=8, head_dim=64, dtype=np.float32):
    rng = np.random.default_rng(0)
    print(f"\ndense attend, {heads} heads x d={head_dim}, n_q=1, {np.dtype(dtype).name}")
    print(f"{'n_kv':>8} " + " ".join(f"{n:>12}" for n in names) + f" {'speedup':>9}")
    for n_kv in (256, 1024, 4096, 16384):
        q = rng.standard_normal((heads, 1, head_dim)).astype(dtype)
        k = rng.standard_normal((heads, n_kv, head_dim)).astype(dtype)
        v = rng.standard_normal((heads, n_kv, head_dim)).astype(dtype)
        times = [
            best_of(lambda be=backends.get_backend(n): be.attend_dense(q, k, v, 0.125, False))
            for n in names
        ]
        ratio = times[0] / times[-1] if len(times) > 1 else float("nan")
        print(f"{n_kv:>8} " + " ".join(f"{t * 1e6:>10.1f}us" for t in times)
              + f" {ratio:>8.2f}x")


def bench_indexed(names, head_dim=64, archive=16384, dtype=np.float32):
    rng = np.random.default_rng(1)
    k = rng.standard_normal((archive, head_dim)).astype(dtype)
    v = rng.standard_normal((archive, head_dim)).astype(dtype)
    q = rng.standard_normal((1, head_dim)).astype(dtype)
    print(f"\nindexed attend, archive {archive} x d={head_dim}, {np.dtype(dtype).name}")
    print(f"{'n_sel':>8} " + " ".join(f"{n:>12}" for n in names) + f" {'speedup':>9}")
    for n_sel in (16, 128, 1024, 8192):
        idx = np.sort(rng.choice(archive, size=n_sel, replace=False)).astype(np.int64)
        times = [
            best_of(lambda be=backends.get_backend(n): be.attend_indexed(q, k, v, idx, 0.125, False))
            for n in names
        ]
        ratio = times[0] / times[-1] if len(times) > 1 else float("nan")
        print(f"{n_sel:>8} " + " ".join(f"{t * 1e6:>10.1f}us" for t in times)
              + f" {ratio:>8.2f}x")


def main():
    names = backends.available_backends()
    if "compiled" in names:
        names = ["numpy", "compiled"]  # numpy first, speedup = numpy/compiled
    else:
        print("compiled core not built; timing numpy fallback only")
    print(f"backends: {', '.join(names)}")
    bench_dense(names)
    bench_dense(names, dtype=np.float64)
    bench_indexed(names)


if __name__ == "__main__":
    main()
