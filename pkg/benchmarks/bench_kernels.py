"""Time the numba kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5]

The first numba call compiles (or loads the on-disk cache); it is excluded
from the timings and reported separately.
"""

import argparse
import time

import numpy as np

from enlarged import kernels
from enlarged.linear import random_subsets


def _best_of(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t)
    return best


def cases(rng):
    X = rng.standard_normal((5000, 3))
    chol = np.linalg.cholesky(np.eye(3) + 0.3)
    mean = np.zeros(3)
    w = rng.random(5000)
    w /= w.sum()
    v = rng.standard_normal(20000)
    xr = np.column_stack([rng.random((200, 5)), np.ones(200)])
    yr = xr @ rng.standard_normal(6) + rng.normal(0, 0.5, 200)
    subsets = random_subsets(rng, 200, 6, 500)
    return {
        "gauss_logpdf n=5000 d=3": lambda k: k["gauss_logpdf"](X, mean, chol),
        "log_mean_exp n=20000": lambda k: k["log_mean_exp"](v),
        "weighted_moments n=5000 d=3": lambda k: k["weighted_moments"](X, w),
        "lts_csteps n=200 p=6 500 subsets x10": lambda k: k["lts_csteps"](xr, yr, subsets, 160, 10),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if "numba" not in kernels.BACKENDS:
        print("numba not available; nothing to compare")
        return
    np_k, nb_k = kernels.BACKENDS["numpy"], kernels.BACKENDS["numba"]
    print(f"{'kernel':40s} {'numpy ms':>10s} {'numba ms':>10s} {'speedup':>8s} {'first call s':>12s}")
    for name, fn in cases(np.random.default_rng(0)).items():
        t0 = time.perf_counter()
        fn(nb_k)
        warm = time.perf_counter() - t0
        a = _best_of(lambda: fn(np_k), args.repeat)
        b = _best_of(lambda: fn(nb_k), args.repeat)
        print(f"{name:40s} {a * 1e3:10.3f} {b * 1e3:10.3f} {a / b:8.1f} {warm:12.3f}")


if __name__ == "__main__":
    main()
