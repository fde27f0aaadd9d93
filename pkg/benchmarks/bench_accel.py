#!/usr/bin/env python3
"""Timing comparison of the numba kernels against the numpy fallback.

Run twice to see both sides:

    python benchmarks/bench_accel.py                   # numba (default)
    PFKDE_DISABLE_NUMBA=1 python benchmarks/bench_accel.py

Workloads mirror the package hot spots: density evaluation on a grid,
self-evaluation at the particle locations, and the flat Gaussian sweep used
by the argmax pruner.
"""

import time

import numpy as np

from pfkde import _accel


def timed(label, fn, *args, repeats=3):
    fn(*args)  # warm-up (includes jit compilation on the numba path)
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t0)
    print(f"{label:<42s} {min(times) * 1e3:9.1f} ms")
    return min(times)


def main():
    backend = "numba" if _accel.USING_NUMBA else "numpy fallback"
    print(f"backend: {backend}\n")
    rng = np.random.default_rng(0)
    sources = rng.multivariate_normal([0, 0], [[0.6, 0.1], [0.1, 1.1]], size=50_000)
    weights = np.full(len(sources), 1.0 / len(sources))
    grid = np.stack(np.meshgrid(np.linspace(-4, 4, 42), np.linspace(-4, 4, 42),
                                indexing="ij"), axis=-1).reshape(-1, 2)
    k = 6.0

    timed("grid eval, gaussian (42x42 x 50k)",
          _accel.pair_values, grid, sources, weights, _accel.GAUSS, k, np.inf)
    timed("grid eval, epanechnikov (42x42 x 50k)",
          _accel.pair_values, grid, sources, weights, _accel.EPAN, k, 1.0 / k)
    timed("grid value+grad, gaussian (42x42 x 50k)",
          _accel.pair_value_grads, grid, sources, weights, _accel.GAUSS, k, np.inf)
    pts = sources[:5_000]
    timed("self eval, gaussian (5k x 50k)",
          _accel.pair_values, pts, sources, weights, _accel.GAUSS, k, np.inf)
    timed("flat gaussian sweep (5k x 50k)",
          _accel.flat_gauss_values, pts, sources, weights, k)


if __name__ == "__main__":
    main()
