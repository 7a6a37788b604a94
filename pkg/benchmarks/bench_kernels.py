"""Timing comparison of the compiled and pure-numpy integrator kernels.

Runs the affine and piecewise-affine RK4 kernels on representative
workloads under both backends and prints per-call times plus the
speedup.  Invoke as a script:

    python3 benchmarks/bench_kernels.py [--steps N] [--repeat K]
"""

import argparse
import time

import numpy as np

from ribc import _kernels, geometry, steer, system


def time_call(fn, args, repeat):
    fn(*args)  # warm up (compilation, cache)
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def affine_workload(steps):
    # closed-loop circuit feedback: 4n-sized augmented matrices are typical
    A = np.array([[-1.0, -1.0, 0.0], [1.0, 0.0, -1.0], [0.0, 1.0, 0.0]])
    K = np.array([[-0.8587, -0.7274, 0.1267]])
    B = np.array([[1.0], [0.0], [0.0]])
    M = A + B @ K
    c = np.zeros(3)
    x0 = np.array([0.2, 0.2, 0.2])
    return (M, c, x0, 1e-3, steps)


def pwa_workload(steps):
    skew = system.AffineSystem(np.array([[0.0, 1.0], [0.0, 0.0]]),
                               np.array([[1.0], [1.0]]), np.zeros(2))
    square = geometry.from_vertices([(1, 1), (1, -1), (-1, -1), (-1, 1)])
    controls, _ = steer.strict_witnesses(skew, square, u_box=2.0)
    law = steer.pwa_feedback(skew, square, controls)
    Minvs, Us = law.pwa_tables()
    x0 = np.array([0.5, -0.4])
    return (skew.A, skew.B, skew.a, Minvs, Us, x0, 1e-3, steps, 1e-12)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--steps", type=int, default=10 ** 4)
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()

    rows = [("affine", affine_workload(args.steps),
             _kernels.rk4_affine_numpy, _kernels.rk4_affine_numba),
            ("pwa", pwa_workload(args.steps),
             _kernels.rk4_pwa_numpy, _kernels.rk4_pwa_numba)]

    print("backend in use: %s (set RIBC_DISABLE_NUMBA=1 to force numpy)"
          % _kernels.BACKEND)
    print("%-8s %12s %12s %9s" % ("kernel", "numpy", "numba", "speedup"))
    for name, work, f_np, f_nb in rows:
        t_np = time_call(f_np, work, args.repeat)
        if f_nb is None:
            print("%-8s %10.3f ms %12s %9s"
                  % (name, 1e3 * t_np, "unavailable", "-"))
            continue
        t_nb = time_call(f_nb, work, args.repeat)
        print("%-8s %10.3f ms %9.3f ms %8.1fx"
              % (name, 1e3 * t_np, 1e3 * t_nb, t_np / t_nb))


if __name__ == "__main__":
    main()
