"""Compare the numba and numpy variants of the hot kernels.

Run with ``python benchmarks/bench_kernels.py [--nights N] [--groups G]``.
The numba variant is timed after one warm-up call so compile time is
reported separately.
"""

import argparse
import time

import numpy as np

from sleepphq import kernels


def night_stream(n_nights, rng, per_night=40):
    counts = rng.integers(per_night // 2, per_night * 3 // 2, size=n_nights)
    ptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
    stages = rng.integers(0, 4, size=ptr[-1]).astype(np.int64)
    durations = rng.integers(30, 1800, size=ptr[-1]).astype(np.float64)
    return stages, durations, ptr


def reml_inputs(n_groups, n_sites, q, rng):
    sizes = rng.integers(1, 20, size=n_groups).astype(np.float64)
    means = rng.normal(size=(n_groups, q))
    site = np.sort(rng.integers(0, n_sites, size=n_groups)).astype(np.int64)
    a = rng.normal(size=(4 * q, q))
    return sizes, means, site, n_sites, a.T @ a


def best_of(func, args, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        func(*args)
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--nights", type=int, default=20000)
    parser.add_argument("--groups", type=int, default=3000)
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()
    rng = np.random.default_rng(args.seed)

    night_args = (*night_stream(args.nights, rng), 300.0)
    reml_args = (*reml_inputs(args.groups, 3, 12, rng), 0.7, 0.05)
    cases = [
        (f"night_stage_totals ({args.nights} nights)", kernels.night_stage_totals_numba,
         kernels.night_stage_totals_numpy, night_args),
        (f"reml_normal_equations ({args.groups} groups)", kernels.reml_normal_equations_numba,
         kernels.reml_normal_equations_numpy, reml_args),
    ]

    print(f"{'kernel':44s} {'compile s':>10s} {'numba ms':>10s} {'numpy ms':>10s} {'speedup':>8s}")
    for label, fast, slow, fargs in cases:
        t0 = time.perf_counter()
        a = fast(*fargs)
        compile_s = time.perf_counter() - t0
        b = slow(*fargs)
        if isinstance(a, tuple):
            assert np.allclose(a[0], b[0], rtol=1e-10) and np.isclose(a[1], b[1], rtol=1e-12)
        else:
            assert np.allclose(a, b, rtol=1e-12, equal_nan=True)
        t_fast = best_of(fast, fargs, args.repeat)
        t_slow = best_of(slow, fargs, args.repeat)
        print(f"{label:44s} {compile_s:10.3f} {1e3 * t_fast:10.3f} {1e3 * t_slow:10.3f} "
              f"{t_slow / t_fast:7.1f}x")


if __name__ == "__main__":
    main()
