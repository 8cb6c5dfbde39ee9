from __future__ import annotations

import json
import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, strategies as st

from subdiff import kernels
from subdiff._accel import USING_NUMBA
from subdiff.specfun import _ml_plan

needs_numba = pytest.mark.skipif(not USING_NUMBA, reason="numba kernels unavailable")


@needs_numba
@given(st.floats(0.1, 0.99), st.floats(0.2, 2.0), st.lists(st.floats(-200.0, 2.0), min_size=1, max_size=40))
def test_ml_kernel_flavours_agree(alpha, beta, xs):
    plan = _ml_plan(alpha, beta, 1e-12, 400)
    x = np.sort(np.array(xs))
    args = (x, plan.coef, plan.n_neg, plan.s_star, plan.n_pos, plan.num, plan.za, plan.asym)
    a, b = kernels._ml_jit(*args), kernels._ml_np(*args)
    # summation order differs, so agreement is at the routine's absolute accuracy
    np.testing.assert_allclose(a[0], b[0], rtol=1e-12, atol=1e-12)
    assert np.array_equal(a[1], b[1])


@needs_numba
@given(st.floats(0.05, 0.95), st.integers(2, 60), st.floats(1.0, 3.0))
def test_fractional_kernel_flavours_agree(gamma, n, r):
    t = (np.arange(n + 1) / n) ** r
    u = np.cos(5 * t) + t**2
    for jit, ref, extra in ((kernels._caputo_l1_jit, kernels._caputo_l1_np, 1.0),
                            (kernels._rl_left_jit, kernels._rl_left_np, 1.0)):
        np.testing.assert_allclose(jit(t, u, gamma, extra), ref(t, u, gamma, extra), rtol=1e-11, atol=1e-13)


@needs_numba
@given(st.integers(0, 12))
def test_history_kernel_flavours_agree(j):
    rng = np.random.default_rng(j)
    W = rng.standard_normal((13, 13, 5))
    G = rng.standard_normal((13, 5))
    np.testing.assert_allclose(kernels._history_jit(W, G, j), kernels._history_np(W, G, j), rtol=1e-13, atol=1e-14)


SCRIPT = """
import json, numpy as np
from subdiff._accel import USING_NUMBA
from subdiff import kernels
from subdiff.spectral import OperatorSpec, SpectralField, build_basis
from subdiff.forward import Nonlinearity, ProblemIndices, solve_forward
from subdiff.fracops import GradedTimeGrid
b = build_basis(OperatorSpec("neumann_laplacian_1d", shift=1.0), 6)
tr, _ = solve_forward(b, ProblemIndices(0.6), Nonlinearity.allen_cahn(0.5, 1.0), None, None,
                      SpectralField(np.r_[0.4, 0.3, -0.2, 0, 0, 0], b), GradedTimeGrid(1.0, 48, 2.0))
print(json.dumps({"numba": USING_NUMBA, "kernel": kernels.history_kernel.__name__, "states": tr.states.tolist()}))
"""


def _run(disable: bool) -> dict:
    env = dict(os.environ)
    env.pop("SUBDIFF_DISABLE_NUMBA", None)
    if disable:
        env["SUBDIFF_DISABLE_NUMBA"] = "1"
    out = subprocess.run([sys.executable, "-c", SCRIPT], env=env, capture_output=True, text=True, check=True)
    return json.loads(out.stdout.strip().splitlines()[-1])


def test_disable_flag_selects_numpy_fallback():
    off = _run(True)
    assert off["numba"] is False and off["kernel"] == "_history_np"
    on = _run(False)
    assert on["numba"] is USING_NUMBA
    np.testing.assert_allclose(np.array(on["states"]), np.array(off["states"]), rtol=1e-10, atol=1e-13)
