"""Timing comparison of the jitted kernels against their plain-Python twins.

Run: python3 benchmarks/bench_kernels.py [--battles N] [--models M] [--repeat R]

Each kernel is timed on identical inputs via both the dispatch used by the
package (numba when available, unless ARENAKIT_NO_NUMBA=1) and the pure
implementation, and the outputs are cross-checked.
"""
import argparse
import time

import numpy as np

from arenakit import kernels


def timeit(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--battles", type=int, default=200_000)
    ap.add_argument("--models", type=int, default=40)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    n, m = args.battles, args.models
    left = rng.integers(0, m, size=n).astype(np.int64)
    right = (left + 1 + rng.integers(0, m - 1, size=n)).astype(np.int64) % m
    score = rng.choice(np.array([0.0, 0.5, 1.0]), size=n)
    weight = rng.uniform(0.5, 2.0, size=n)
    strengths = rng.normal(5.76, 0.3, size=m)
    record_of_entry = np.arange(n, dtype=np.int64)
    picked = rng.integers(0, 3, size=n).astype(np.int64)

    cases = [
        ("elo_replay", kernels.elo_replay, kernels._elo_replay_py,
         (left, right, score, 32.0, 400.0, 1000.0, m)),
        ("aggregate_pairs", kernels.aggregate_pairs, kernels._aggregate_pairs_py,
         (left, right, weight, m)),
        ("resample_aggregate", kernels.resample_aggregate, kernels._resample_aggregate_py,
         (left, right, weight, record_of_entry, picked, m)),
    ]
    wins = kernels._aggregate_pairs_py(left, right, weight, m)
    cases += [
        ("bt_loglik_grad", kernels.bt_loglik_grad, kernels._bt_loglik_grad_py,
         (wins, strengths)),
        ("bt_hessian", kernels.bt_hessian, kernels._bt_hessian_py,
         (wins, strengths)),
    ]

    backend = "numba" if kernels.HAVE_NUMBA else "numpy fallback"
    print(f"dispatch backend: {backend}; battles={n}, models={m}, repeat={args.repeat}\n")
    print(f"{'kernel':<22}{'dispatched':>12}{'pure python':>14}{'speedup':>10}")
    for name, fast, pure, argv in cases:
        fast(*argv)  # warm-up (jit compile)
        t_fast, out_fast = timeit(lambda: fast(*argv), args.repeat)
        t_pure, out_pure = timeit(lambda: pure(*argv), args.repeat)
        a = np.asarray(out_fast[0] if isinstance(out_fast, tuple) else out_fast)
        b = np.asarray(out_pure[0] if isinstance(out_pure, tuple) else out_pure)
        assert np.allclose(a, b, atol=1e-9), name
        print(f"{name:<22}{t_fast * 1e3:>10.2f}ms{t_pure * 1e3:>12.2f}ms{t_pure / t_fast:>9.1f}x")


if __name__ == "__main__":
    main()
