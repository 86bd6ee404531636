"""Compare the numba kernels in ``crowdpref._accel`` with their numpy fallbacks.

Usage: ``python benchmarks/bench_accel.py [--repeats 5]``. Prints one line per
(operation, size) with the best-of-N time for each backend, the speed-up and
the largest absolute difference between the two results.
"""
import argparse
import time

import numpy as np

from crowdpref import _accel


def best_time(fn, args, repeats):
    fn(*args)  # warm-up (and numba compilation)
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def cases(rng):
    for n in (200, 1000, 3000):
        X = rng.random((n, 2))
        inv = np.array([2.0, 3.0])
        yield "scaled_sqdist", n, (X, X[: n // 2].copy(), inv)
        yield "scaled_sqdist_sym", n, (X, inv)
    for n in (200, 1000, 2000):
        yield "abs_diff_median", n, (rng.random(n),)
    for m in (50, 200, 500):
        A = rng.random((1000, m))
        S = rng.random((m, m))
        S = S @ S.T
        a = rng.integers(1000, size=1000)
        b = rng.integers(1000, size=1000)
        yield "pair_row_quad", m, (A, a, b, S)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()
    rng = np.random.default_rng(0)
    print(f"{'operation':<20}{'size':>6}{'numpy ms':>12}{'numba ms':>12}{'speed-up':>10}{'max diff':>12}")
    for name, size, inputs in cases(rng):
        f_np = getattr(_accel, f"{name}_numpy")
        f_nb = getattr(_accel, f"{name}_numba")
        t_np = best_time(f_np, inputs, args.repeats)
        t_nb = best_time(f_nb, inputs, args.repeats)
        diff = float(np.max(np.abs(np.asarray(f_np(*inputs)) - np.asarray(f_nb(*inputs)))))
        print(f"{name:<20}{size:>6}{1e3 * t_np:>12.3f}{1e3 * t_nb:>12.3f}{t_np / t_nb:>10.2f}{diff:>12.2e}")


if __name__ == "__main__":
    main()
