"""Benchmark the causal split kernel: compiled extension vs numpy fallback.

Run from the repo root:

    python3 benchmarks/bench_split.py

Times `scan_feature` on representative node sizes (the kernel is called once
per candidate feature per tree node) and checks that both backends return
bit-identical results while timing them.
"""

import time

import numpy as np

from surgekit.causal._split_py import scan_feature as scan_numpy

try:
    from surgekit.causal._splitkern import scan_feature as scan_cython
except ImportError:
    scan_cython = None


def _cases(rng, n, k):
    out = []
    for _ in range(k):
        v = np.sort(rng.normal(size=n))
        w = rng.normal(size=n)
        y = 1.5 * w * (v > 0) + rng.normal(size=n)
        eps = 1e-10 * max(1.0, float(np.dot(w, w)))
        out.append((v, w, y, eps))
    return out


def _time(fn, cases, min_leaf, reps):
    best = float("inf")
    for _ in range(reps):
        t0 = time.perf_counter()
        for v, w, y, eps in cases:
            fn(v, w, y, min_leaf, eps)
        best = min(best, time.perf_counter() - t0)
    return best / len(cases)


def main():
    rng = np.random.default_rng(0)
    min_leaf = 10
    print(f"{'node size':>10} {'numpy us':>12} {'cython us':>12} {'speedup':>9}")
    for n in (32, 128, 512, 2048, 8192):
        cases = _cases(rng, n, k=max(4, 2048 // n))
        t_np = _time(scan_numpy, cases, min_leaf, reps=5)
        if scan_cython is None:
            print(f"{n:>10} {t_np * 1e6:>12.1f} {'(not built)':>12} {'-':>9}")
            continue
        for v, w, y, eps in cases:
            a = scan_numpy(v, w, y, min_leaf, eps)
            b = scan_cython(v, w, y, min_leaf, eps)
            assert a == b, f"backend mismatch at n={n}: {a} vs {b}"
        t_cy = _time(scan_cython, cases, min_leaf, reps=5)
        print(f"{n:>10} {t_np * 1e6:>12.1f} {t_cy * 1e6:>12.1f} {t_np / t_cy:>8.1f}x")


if __name__ == "__main__":
    main()
