"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--T 300] [--repeat 5]

Prints one line per (kernel, p) with the best-of-``repeat`` wall time of each
backend, the speed-up, and the largest absolute difference between outputs.
"""
import argparse
import time

import numpy as np

from poetcov import _backend


def best_time(fn, repeat):
    best = float("inf")
    out = None
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t)
    return best, out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--T", type=int, default=300)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--sizes", default="100,200,400")
    args = ap.parse_args()

    py = _backend.python_kernels
    cy = _backend.compiled_kernels
    if cy is None:
        print("compiled extension not available; build it with `pip install -e .`")
        return
    rng = np.random.default_rng(0)
    print(f"{'kernel':<18}{'p':>5}{'python_s':>12}{'cython_s':>12}{'speedup':>9}{'max_diff':>11}")
    for p in (int(s) for s in args.sizes.split(",")):
        U = rng.standard_normal((p, args.T))
        S = U @ U.T / args.T
        _, theta = py.residual_moments(U)
        tau = 0.3 * np.sqrt(theta)
        cases = [
            ("residual_moments", lambda k: k.residual_moments(U)),
            ("threshold_hard", lambda k: k.threshold_matrix(S, tau, 0)),
            ("threshold_scad", lambda k: k.threshold_matrix(S, tau, 2)),
        ]
        for name, call in cases:
            tp, op = best_time(lambda: call(py), args.repeat)
            tc, oc = best_time(lambda: call(cy), args.repeat)
            op = op if isinstance(op, tuple) else (op,)
            oc = oc if isinstance(oc, tuple) else (oc,)
            diff = max(float(np.max(np.abs(a - b))) for a, b in zip(op, oc))
            print(f"{name:<18}{p:>5}{tp:>12.5f}{tc:>12.5f}{tp / tc:>9.1f}{diff:>11.2e}")


if __name__ == "__main__":
    main()
