"""Compiled kernels versus the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Prints the best wall time of each kernel under both backends and the speedup.
"""
import argparse
import time

import numpy as np

from hypercolor import kernels
from hypercolor.kdtree import KDTree


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(rng):
    x = rng.standard_normal((256, 64))
    w = rng.standard_normal((64, 64))
    b = rng.standard_normal(64)
    up = rng.standard_normal((256, 64))
    q = rng.standard_normal((1000, 3))
    r = rng.standard_normal((1000, 3))
    tree = KDTree(rng.standard_normal((4096, 3)))
    tq = rng.standard_normal((4096, 3))
    cost = rng.random((256, 256))
    return {
        "dense_forward 256x64x64": lambda impl: kernels.dense_forward(x, w, b, impl),
        "dense_backward 256x64x64": lambda impl: kernels.dense_backward(x, w, up, impl),
        "nearest_brute 1000x1000": lambda impl: kernels.nearest_brute(q, r, impl),
        "kdtree_query 4096 pts, k=1": lambda impl: kernels.kdtree_query(tree, tq, 1, impl),
        "linear_assignment 256x256": lambda impl: kernels.linear_assignment(cost, impl),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if kernels.compiled is None:
        print("compiled kernels unavailable; only the fallback can be timed")
    rng = np.random.default_rng(0)
    print(f"{'kernel':32s} {'compiled ms':>12s} {'python ms':>12s} {'speedup':>8s}")
    for name, fn in cases(rng).items():
        py = best_of(lambda: fn(kernels.get_backend("python")), args.repeat)
        if kernels.compiled is None:
            print(f"{name:32s} {'-':>12s} {py * 1e3:12.3f} {'-':>8s}")
            continue
        c = best_of(lambda: fn(kernels.compiled), args.repeat)
        print(f"{name:32s} {c * 1e3:12.3f} {py * 1e3:12.3f} {py / c:8.1f}x")


if __name__ == "__main__":
    main()
