"""Time the likelihood kernels on both backends.

Usage::

    python3 benchmarks/bench_kernels.py [--repeat 5] [--windows 1024]

Each kernel is called once to warm up (JIT compilation for numba), then
timed ``--repeat`` times; the best time is reported. A final row times a
whole memoized table fill for a b=3, N=8 tone scenario, which is what a
scenario run spends most of its time on.
"""
import argparse
import time

import numpy as np

from qlut import _accel, make_uniform_midriser
from qlut.estimators import BayesEstimator, EstimatorConfig
from qlut.signals import ScenarioModel, ToneParams, known_prior


def best_of(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def problem(windows, N=8, n_x0=512, n_inner=128, seed=0):
    rng = np.random.default_rng(seed)
    q = make_uniform_midriser(3)
    samples = rng.uniform(-1, 1, (n_x0, n_inner, N))
    logv = np.log(rng.dirichlet(np.ones(n_inner), n_x0))
    codes = rng.integers(0, 8, (windows, N))
    return q, samples, logv, codes


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--windows", type=int, default=1024)
    args = ap.parse_args()
    if _accel.numba is None:
        raise SystemExit("numba is not installed; nothing to compare")

    q, samples, logv, codes = problem(args.windows)
    flat = samples.reshape(-1, samples.shape[2])
    table = _accel.build_table(flat, q.lower, q.upper, 0.04)
    few = codes[:64]
    kernels = {
        "build_table": lambda b: _accel.build_table(flat, q.lower, q.upper, 0.04, backend=b),
        "grid_loglik_table": lambda b: _accel.grid_loglik_table(table, logv, codes, backend=b),
        "grid_loglik_direct (64 windows)": lambda b: _accel.grid_loglik_direct(
            samples, logv, few, q.lower, q.upper, 0.04, backend=b),
        "point_loglik (512 windows)": lambda b: _accel.point_loglik(
            samples, logv, codes[:512], q.lower, q.upper, 0.04, backend=b),
    }
    print(f"{'kernel':<34}{'numba [s]':>12}{'numpy [s]':>12}{'speed-up':>10}")
    for name, fn in kernels.items():
        t_nb = best_of(lambda: fn("numba"), args.repeat)
        t_np = best_of(lambda: fn("numpy"), args.repeat)
        print(f"{name:<34}{t_nb:>12.4f}{t_np:>12.4f}{t_np / t_nb:>10.1f}")

    d = ToneParams(0.875, np.pi / 10)
    s = ScenarioModel(d, q, 8, known_prior(d, 0.04), 0.04)
    wins = np.random.default_rng(1).integers(1, 9, (args.windows, 8))
    row = []
    for backend in ("numba", "numpy"):
        saved = _accel.BACKEND
        _accel.BACKEND = backend
        try:
            est = BayesEstimator(s, EstimatorConfig("mmse"))
            row.append(best_of(lambda: est.estimate(wins), max(1, args.repeat // 2)))
        finally:
            _accel.BACKEND = saved
    print(f"{'MMSE fill, N=8 (' + str(args.windows) + ' windows)':<34}{row[0]:>12.4f}{row[1]:>12.4f}"
          f"{row[1] / row[0]:>10.1f}")


if __name__ == "__main__":
    main()
