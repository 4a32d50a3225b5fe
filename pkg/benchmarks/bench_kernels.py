#!/usr/bin/env python3
"""Benchmark the jitted kernels against the pure-numpy fallback.

Runs the three hot kernels on a large synthetic workload plus one
end-to-end GEE fit, under whichever backend is active (CROSSFIT_BACKEND)
and the always-available numpy implementations.  Usage:

    python3 benchmarks/bench_kernels.py [--clusters N] [--size L] [--reps R]
"""

import argparse
import time

import numpy as np

from crossfit import kernels


def timeit(fn, reps):
    fn()  # warm (JIT compile / cache load)
    t0 = time.perf_counter()
    for _ in range(reps):
        fn()
    return (time.perf_counter() - t0) / reps


def bench_cluster_stats(n_clusters, size, reps):
    rng = np.random.default_rng(0)
    n = n_clusters * size
    p = 8
    X = np.ascontiguousarray(rng.normal(size=(n, p)))
    resid = rng.normal(size=n)
    dmu = np.ones(n)
    inv_sd = np.ones(n)
    starts = (np.arange(n_clusters) * size).astype(np.int64)
    counts = np.full(n_clusters, size, dtype=np.int64)
    r = 0.6 ** np.abs(np.subtract.outer(np.arange(size), np.arange(size)))
    stack = np.linalg.inv(r)[None, :, :]
    idx = np.zeros(n_clusters, dtype=np.int64)

    args = (resid, dmu, inv_sd, X, starts, counts, stack, idx)
    return (timeit(lambda: kernels.cluster_stats(*args), reps),
            timeit(lambda: kernels.cluster_stats_numpy(*args), reps))


def bench_pair_sums(n_clusters, size, reps):
    rng = np.random.default_rng(1)
    e = rng.normal(size=n_clusters * size)
    starts = (np.arange(n_clusters) * size).astype(np.int64)
    counts = np.full(n_clusters, size, dtype=np.int64)
    return (timeit(lambda: kernels.pair_sums(e, starts, counts, False), reps),
            timeit(lambda: kernels.pair_sums_numpy(e, starts, counts, False),
                   reps))


def bench_bspline(reps):
    rng = np.random.default_rng(2)
    x = np.ascontiguousarray(rng.uniform(0, 1, size=100_000))
    knots = np.concatenate((np.zeros(4), np.linspace(0.2, 0.8, 4), np.ones(4)))
    return (timeit(lambda: kernels.bspline_rows(x, knots, 3), reps),
            timeit(lambda: kernels.bspline_rows_numpy(x, knots, 3),
                   max(1, reps // 10)))


def bench_fit(n_clusters, size):
    from crossfit import Scenario, fit_gee, simulate_design
    scenario = Scenario(
        sequences=["AB", "BA"],
        units_per_sequence=[n_clusters // 2, n_clusters - n_clusters // 2],
        times=list(np.linspace(0.0, 10.0, size // 2)),
        family="gaussian",
        beta={"(Intercept)": 1.0, "TreatmentB": 0.5, "Carry_B": 0.2},
        correlation={"structure": "exchangeable", "alpha": 0.4},
        seed=3)
    frame, _ = simulate_design(scenario)
    t0 = time.perf_counter()
    fit_gee(frame, correlation="exchangeable")
    return time.perf_counter() - t0


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--clusters", type=int, default=2000)
    parser.add_argument("--size", type=int, default=30)
    parser.add_argument("--reps", type=int, default=20)
    args = parser.parse_args()

    print(f"active backend: {kernels.BACKEND}")
    rows = [
        ("cluster_stats", *bench_cluster_stats(args.clusters, args.size,
                                               args.reps)),
        ("pair_sums", *bench_pair_sums(args.clusters, args.size, args.reps)),
        ("bspline_rows", *bench_bspline(args.reps)),
    ]
    print(f"{'kernel':15} {'active [ms]':>12} {'numpy [ms]':>12} {'speedup':>8}")
    for name, fast, slow in rows:
        print(f"{name:15} {fast * 1e3:12.3f} {slow * 1e3:12.3f} "
              f"{slow / fast:7.1f}x")
    fit_s = bench_fit(args.clusters, args.size)
    print(f"\nend-to-end exchangeable fit on {args.clusters} clusters of "
          f"size {args.size}: {fit_s:.3f} s")


if __name__ == "__main__":
    main()
