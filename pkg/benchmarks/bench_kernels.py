"""Benchmarks the compiled kernels against the pure-numpy fallbacks.

Run with compiled kernels (the default) and with ``SLAM4D_DISABLE_NUMBA=1``
to compare; this script times both code paths in a single process by
calling the internal numpy implementations directly.

Usage: python benchmarks/bench_kernels.py [--n-rays 4096] [--repeats 5]
"""

import argparse
import time

import numpy as np

from slam4d import accel


def _timeit(fn, repeats):
    fn()  # warmup (also triggers jit compilation)
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_hexplane(n, repeats, feature_dim=16, res=64):
    rng = np.random.default_rng(0)
    planes = [
        np.ascontiguousarray(rng.normal(size=(res, res, 2 * feature_dim)))
        for _ in range(6)
    ]
    vecs = [np.ascontiguousarray(rng.normal(size=(2, feature_dim)))
            for _ in range(3)]
    coords = rng.uniform(0, 1, (n, 4))
    grad = rng.normal(size=(n, feature_dim))

    rows = []
    rows.append((
        "hexplane_query",
        _timeit(lambda: accel.hexplane_query(planes, vecs, coords,
                                             feature_dim), repeats),
        _timeit(lambda: accel._hexplane_query_numpy(planes, vecs, coords,
                                                    feature_dim), repeats),
    ))
    rows.append((
        "hexplane_query_backward",
        _timeit(lambda: accel.hexplane_query_backward(planes, vecs, coords,
                                                      grad), repeats),
        _timeit(lambda: accel._hexplane_backward_numpy(planes, vecs, coords,
                                                       grad), repeats),
    ))
    return rows


def bench_composite(n, repeats, samples=48):
    rng = np.random.default_rng(1)
    sigma = rng.uniform(0, 5, (n, samples))
    rgb = rng.uniform(0, 1, (n, samples, 3))
    deltas = rng.uniform(0.01, 0.3, (n, samples))
    _, weights, _ = accel.composite_forward(sigma, rgb, deltas)
    grad_out = rng.normal(size=(n, 3))

    rows = []
    rows.append((
        "composite_forward",
        _timeit(lambda: accel.composite_forward(sigma, rgb, deltas), repeats),
        _timeit(lambda: accel._composite_forward_numpy(sigma, rgb, deltas),
                repeats),
    ))
    rows.append((
        "composite_backward",
        _timeit(lambda: accel.composite_backward(sigma, rgb, deltas, weights,
                                                 grad_out), repeats),
        _timeit(lambda: accel._composite_backward_numpy(sigma, rgb, deltas,
                                                        weights, grad_out),
                repeats),
    ))
    return rows


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--n-rays", type=int, default=4096)
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    label = "numba" if accel.NUMBA_ENABLED else "numpy (fallback active)"
    print(f"active dispatch path: {label}")
    print(f"{'kernel':28s} {'dispatch (s)':>14s} {'numpy (s)':>14s} "
          f"{'speedup':>8s}")
    rows = bench_hexplane(args.n_rays, args.repeats)
    rows += bench_composite(args.n_rays, args.repeats)
    for name, fast, slow in rows:
        print(f"{name:28s} {fast:14.6f} {slow:14.6f} {slow / fast:8.2f}x")


if __name__ == "__main__":
    main()
