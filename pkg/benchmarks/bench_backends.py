"""Compiled vs pure-Python kernels.

Times the three hot kernels (block flight of the cube method, random-scan
truncated-normal Gibbs sweeps, greedy Stein selection) with each backend on
identical inputs and seeds, and checks that both return the same result.

Usage::

    python benchmarks/bench_backends.py [--repeat 3] [--quick]
"""

import argparse
import time

import numpy as np

from cubethin import _backend, samplers
from cubethin.cube import BalancedProblem


def _best(fn, repeat):
    best, out = np.inf, None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def flight_case(N, J, seed=0):
    rng = np.random.default_rng(seed)
    pi = rng.uniform(0.05, 0.95, size=N)
    A = np.ascontiguousarray(np.vstack([np.ones(N), rng.standard_normal((J - 1, N))]))
    BalancedProblem(pi, A)  # validates the instance

    def run(k):
        x = pi.copy()
        k.fast_flight(x, A, np.random.default_rng(seed), 1e-9, 1e-12, None)
        return x

    return f"fast_flight N'={N} J'={J}", run


def gibbs_case(d, n, seed=0):
    target = samplers.random_truncnorm_target(d, seed)
    x0 = np.maximum(target.mu, 1.0)

    def run(k):
        return np.asarray(k.truncnorm_gibbs(target.mu, target.precision, target.cond_sd, x0, n, np.random.default_rng(seed)))

    return f"truncnorm_gibbs d={d} N={n}", run


def stein_case(n, m, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, 2))

    def run(k):
        return np.asarray(k.stein_greedy(X, -X, 1.0, m))

    return f"stein_greedy N={n} M={m}", run


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=3, help="timings per case; the best is kept")
    parser.add_argument("--quick", action="store_true", help="smaller problems")
    args = parser.parse_args(argv)

    py = _backend.get("python")
    try:
        compiled = _backend.get("compiled")
    except ImportError:
        print("compiled kernels are not built; only the Python backend is available")
        compiled = None

    scale = 0.1 if args.quick else 1.0
    cases = [
        flight_case(int(2000 * scale), 3),
        flight_case(int(20000 * scale), 6),
        gibbs_case(5, int(20000 * scale)),
        gibbs_case(10, int(100000 * scale)),
        stein_case(int(5000 * scale), 20),
    ]

    print(f"active backend: {_backend.NAME}")
    print(f"{'kernel':34s} {'python [s]':>11s} {'compiled [s]':>13s} {'speed-up':>9s}  identical")
    for name, run in cases:
        t_py, out_py = _best(lambda: run(py), args.repeat)
        if compiled is None:
            print(f"{name:34s} {t_py:11.4f} {'-':>13s} {'-':>9s}  -")
            continue
        t_c, out_c = _best(lambda: run(compiled), args.repeat)
        same = out_py.shape == out_c.shape and out_py.tobytes() == out_c.tobytes()
        print(f"{name:34s} {t_py:11.4f} {t_c:13.4f} {t_py / t_c:8.1f}x  {same}")


if __name__ == "__main__":
    main()
