"""Time the numba kernels against their pure-numpy twins.

    python benchmarks/bench_kernels.py [--repeat N]

Both implementations are called directly, so HFSLOCK_DISABLE_NUMBA does not
matter here. The first numba call (compilation) is excluded from timing.
"""
import argparse
import time

import numpy as np

from hfslock import kernels
from hfslock._jit import HAVE_NUMBA


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases():
    rng = np.random.default_rng(0)
    x = rng.uniform(-30, 30, 200_000)
    y = 10 ** rng.uniform(-6, 1, x.size)
    yield "faddeeva (200k points)", (kernels.faddeeva_numba, kernels.faddeeva_numpy), (x, y)

    axis = np.arange(-4000.0, 4000.0, 0.4)
    centers = np.linspace(-1500, 1500, 15)
    weights = np.full(15, 1 / 15)
    yield ("profile_sum (20k x 15)", (kernels.profile_sum_numba, kernels.profile_sum_numpy),
           (axis, centers, weights, 155.0, 10.0))
    yield ("profile_matrix (20k x 15)", (kernels.profile_matrix_numba, kernels.profile_matrix_numpy),
           (axis, centers, 155.0, 10.0))

    nwin, nwindows = 256, 820  # 100 s at 8.2 Hz dither
    nu = 5.0 + np.cumsum(rng.normal(0, 0.01, nwin * nwindows))
    noise = rng.normal(0, 0.01, nu.size)
    dither = 18.0 * np.sin(2 * np.pi * np.arange(nwin) / nwin)
    args = (nu, noise, dither, centers, weights, 155.0, 10.0, 1.0, 0.05, 0.0, 0.0,
            0.0, 2.0, 0.0, nwin / 2099.2, 1000.0, -2e-3, True)
    yield "lock_loop (100 s, 210k samples)", (kernels.lock_loop_numba, kernels.lock_loop_numpy), args


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    args = p.parse_args()
    if not HAVE_NUMBA:
        raise SystemExit("numba is not importable; nothing to compare")
    print(f"{'kernel':34s} {'numba [ms]':>11s} {'numpy [ms]':>11s} {'speed-up':>9s}")
    for name, (fast, slow), a in cases():
        fast(*a)  # compile
        tf = best_of(lambda: fast(*a), args.repeat)
        ts = best_of(lambda: slow(*a), args.repeat)
        print(f"{name:34s} {tf * 1e3:11.2f} {ts * 1e3:11.2f} {ts / tf:8.1f}x")


if __name__ == "__main__":
    main()
