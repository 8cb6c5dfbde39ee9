"""Time the numba kernels against their numpy fallbacks.

Usage: python benchmarks/bench_kernels.py [--repeat 5]

Each kernel is called on the same inputs in both flavours; the table lists
the best wall time of ``--repeat`` runs, the speed-up and the largest
absolute difference between the two results.  A final row times a complete
forward solve in a subprocess with and without ``SUBDIFF_DISABLE_NUMBA``.
"""
from __future__ import annotations

import argparse
import os
import subprocess
import sys
import time

import numpy as np

from subdiff import kernels
from subdiff._accel import USING_NUMBA
from subdiff.specfun import _ml_plan


def best_of(fn, repeat):
    fn()  # warm-up (and JIT compile)
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def cases():
    rng = np.random.default_rng(0)
    x = -np.sort(rng.uniform(0, 50, 200_000)) ** 2
    plan = _ml_plan(0.6, 1.0, 1e-12, 400)
    ml_args = (x, plan.coef, plan.n_neg, plan.s_star, plan.n_pos, plan.num, plan.za, plan.asym)
    t = 2.0 * (np.arange(4001) / 4000) ** 2
    u = np.cos(3 * t) + t
    n1, N = 1025, 64
    W = rng.standard_normal((n1, n1, N))
    G = rng.standard_normal((n1, N))
    yield "mittag_leffler (2e5 pts)", kernels._ml_jit, kernels._ml_np, ml_args, lambda r: r[0]
    yield "caputo_l1 (4000 steps)", kernels._caputo_l1_jit, kernels._caputo_l1_np, (t, u, 0.6, 1.0), None
    yield "rl_integral (4000 steps)", kernels._rl_left_jit, kernels._rl_left_np, (t, u, 0.4, 1.0), None
    yield "history row sum (j=1024, N=64)", kernels._history_jit, kernels._history_np, (W, G, 1024), None


FORWARD = """
import time
from subdiff.spectral import OperatorSpec, SpectralField, build_basis
from subdiff.forward import Nonlinearity, ProblemIndices, solve_forward
from subdiff.fracops import GradedTimeGrid
import numpy as np
b = build_basis(OperatorSpec("neumann_laplacian_1d", shift=1.0), 16)
u0 = SpectralField(np.r_[0.4, 0.3, -0.2, 0.1, np.zeros(12)], b)
g = GradedTimeGrid(1.0, 512, 2.0)
solve_forward(b, ProblemIndices(0.5), Nonlinearity.allen_cahn(0.5, 1.0), None, None, u0, GradedTimeGrid(1.0, 8, 2.0))
t0 = time.perf_counter()
solve_forward(b, ProblemIndices(0.5), Nonlinearity.allen_cahn(0.5, 1.0), None, None, u0, g)
print(time.perf_counter() - t0)
"""


def forward_time(disable: bool) -> float:
    env = dict(os.environ)
    if disable:
        env["SUBDIFF_DISABLE_NUMBA"] = "1"
    else:
        env.pop("SUBDIFF_DISABLE_NUMBA", None)
    res = subprocess.run([sys.executable, "-c", FORWARD], env=env, capture_output=True, text=True, check=True)
    return float(res.stdout.strip().splitlines()[-1])


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if not USING_NUMBA:
        print("numba is disabled; the *_jit kernels run as plain python (expect them to be slow)")
    print(f"{'kernel':<32} {'numba [s]':>10} {'numpy [s]':>10} {'speed-up':>9} {'max |diff|':>11}")
    for name, fj, fn, a, pick in cases():
        tj, oj = best_of(lambda: fj(*a), args.repeat)
        tn, on = best_of(lambda: fn(*a), args.repeat)
        if pick:
            oj, on = pick(oj), pick(on)
        diff = float(np.max(np.abs(np.asarray(oj) - np.asarray(on))))
        print(f"{name:<32} {tj:>10.4f} {tn:>10.4f} {tn / tj:>9.2f} {diff:>11.2e}")
    fj, fn = forward_time(False), forward_time(True)
    print(f"{'forward solve (N=16, n=512)':<32} {fj:>10.4f} {fn:>10.4f} {fn / fj:>9.2f} {'':>11}")


if __name__ == "__main__":
    main()
