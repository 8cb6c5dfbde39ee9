from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate

from subdiff.fracops import (
    GradedTimeGrid, GridMismatchError, ScalarTrajectory, TimeGrid, caputo_l1, coercivity_value,
    ibp_residual, left_rl_derivative, right_rl_derivative, rl_integral,
)
from subdiff.specfun import ml_eval


def traj(grid, fn):
    return ScalarTrajectory(grid, fn(grid.nodes))


def test_caputo_of_constant_is_zero():
    g = GradedTimeGrid(1.0, 32, 2.0)
    assert np.all(caputo_l1(traj(g, lambda t: 0 * t + 3.0), 0.4).values == 0.0)


def test_caputo_of_t_is_exact():
    g = GradedTimeGrid(1.0, 16, 1.5)
    d = caputo_l1(traj(g, lambda t: t), 0.5).values
    assert d[-1] == pytest.approx(2 / math.sqrt(math.pi), rel=1e-13)
    np.testing.assert_allclose(d, g.nodes**0.5 / math.gamma(1.5), rtol=1e-12, atol=1e-15)


def test_caputo_of_mittag_leffler_relaxation():
    # D^g E_g(-t^g) = -E_g(-t^g)
    g = GradedTimeGrid(1.0, 4096, 2.0)
    u = ml_eval(0.5, 1.0, -g.nodes**0.5)
    d = caputo_l1(ScalarTrajectory(g, u), 0.5).values
    assert abs(d[-1] + 0.4275835762) <= 1e-3
    assert np.max(np.abs(d[g.nodes >= 0.1] + u[g.nodes >= 0.1])) <= 1e-3


@pytest.mark.parametrize("a", [0.2, 0.5, 0.9])
def test_rl_integral_of_one(a):
    g = GradedTimeGrid(2.0, 40, 2.0)
    one = traj(g, lambda t: np.ones_like(t))
    np.testing.assert_allclose(rl_integral(one, a).values, g.nodes**a / math.gamma(1 + a), rtol=1e-12, atol=1e-15)
    np.testing.assert_allclose(rl_integral(one, a, "right").values, (2.0 - g.nodes) ** a / math.gamma(1 + a),
                               rtol=1e-12, atol=1e-15)


def test_right_integral_of_linear():
    g = GradedTimeGrid(1.0, 50, 1.0)
    r = rl_integral(traj(g, lambda t: 1.0 - t), 0.3, "right").values
    np.testing.assert_allclose(r, (1 - g.nodes) ** 1.3 / math.gamma(2.3), rtol=1e-12, atol=1e-15)


def test_right_integral_is_reversal_of_left():
    g = GradedTimeGrid(1.0, 64, 2.0)
    u = traj(g, np.cos)
    right = rl_integral(u, 0.4, "right").values
    left_rev = rl_integral(u.reversed(), 0.4).values[::-1]
    assert np.array_equal(right, left_rev)


def test_integral_of_derivative_matches_caputo():
    g = GradedTimeGrid(1.0, 4096, 1.0)
    a = rl_integral(traj(g, np.cos), 0.5).values
    b = caputo_l1(traj(g, np.sin), 0.5).values
    assert np.max(np.abs(a - b)) <= 1e-6


def test_left_rl_derivative_of_constant():
    g = GradedTimeGrid(1.0, 20, 1.0)
    d = left_rl_derivative(traj(g, lambda t: 2 + 0 * t), 0.3).values
    assert d[0] == np.inf
    np.testing.assert_allclose(d[1:], 2 * g.nodes[1:] ** -0.3 / math.gamma(0.7), rtol=1e-13)


def test_right_rl_derivative_of_constant():
    g = GradedTimeGrid(1.0, 20, 1.0)
    d = right_rl_derivative(traj(g, lambda t: 2 + 0 * t), 0.3).values
    assert d[-1] == np.inf
    np.testing.assert_allclose(d[:-1], 2 * (1 - g.nodes[:-1]) ** -0.3 / math.gamma(0.7), rtol=1e-13)


def test_right_rl_derivative_vanishing_at_T():
    # D_{t,T}^g (T - t) = (T - t)^(1-g)/Gamma(2-g)
    g = GradedTimeGrid(1.0, 30, 1.0)
    d = right_rl_derivative(traj(g, lambda t: 1 - t), 0.6).values
    np.testing.assert_allclose(d, (1 - g.nodes) ** 0.4 / math.gamma(1.4), rtol=1e-12, atol=1e-14)


@pytest.mark.parametrize("u,v", [(lambda t: t**2, lambda t: (1 - t) ** 2),
                                 (np.sin, np.cos),
                                 (lambda t: 1 + t, lambda t: np.exp(-t))])
def test_integration_by_parts(u, v):
    g = GradedTimeGrid(1.0, 2048, 1.0)
    assert ibp_residual(traj(g, u), traj(g, v), 0.5) <= 1e-4


def test_ibp_grid_mismatch():
    a, b = GradedTimeGrid(1.0, 8, 1.0), GradedTimeGrid(1.0, 8, 2.0)
    with pytest.raises(GridMismatchError):
        ibp_residual(traj(a, np.sin), traj(b, np.sin), 0.5)


@pytest.mark.parametrize("gamma", [0.2, 0.5, 0.8])
def test_coercivity_linear_exact(gamma):
    g = GradedTimeGrid(1.0, 33, 2.0)
    assert coercivity_value(1 - g.nodes, g, gamma) == pytest.approx(1 / math.gamma(3 - gamma), rel=1e-12)


@given(st.lists(st.floats(-5, 5), min_size=12, max_size=12), st.floats(0.05, 0.95))
def test_coercivity_nonnegative(vals, gamma):
    g = GradedTimeGrid(1.0, 11, 2.0)
    q = coercivity_value(np.array(vals), g, gamma)
    scale = max(1.0, float(np.sum(np.diff(vals) ** 2 / g.steps)))
    assert q >= -1e-12 * scale


def test_coercivity_validation():
    g = GradedTimeGrid(1.0, 4, 1.0)
    with pytest.raises(ValueError):
        coercivity_value(np.zeros(3), g, 0.5)


def test_rl_semigroup():
    errs = []
    for n in (256, 512, 1024, 2048):
        g = GradedTimeGrid(1.0, n, 2.0)
        u = traj(g, np.cos)
        errs.append(np.max(np.abs(rl_integral(rl_integral(u, 0.3), 0.4).values - rl_integral(u, 0.7).values)))
    assert errs[-1] <= 1e-5
    assert all(e1 < e0 for e0, e1 in zip(errs, errs[1:]))


def test_caputo_limit_gamma_to_one():
    g = GradedTimeGrid(1.0, 2048, 1.0)
    d = caputo_l1(traj(g, np.sin), 1 - 1e-6).values
    assert np.max(np.abs(d[1:] - np.cos(g.nodes[1:]))) <= 1e-3


def _caputo_of_interpolant(t, u, gamma, j):
    # exact Caputo of the piecewise-linear interpolant at t_j, cellwise with an algebraic weight
    tot = 0.0
    for k in range(j):
        slope = (u[k + 1] - u[k]) / (t[k + 1] - t[k])
        if k == j - 1:
            val = integrate.quad(lambda s: 1.0, t[k], t[j], weight="alg", wvar=(0.0, -gamma))[0]
        else:
            val = integrate.quad(lambda s: (t[j] - s) ** -gamma, t[k], t[k + 1])[0]
        tot += slope * val
    return tot / math.gamma(1 - gamma)


@pytest.mark.parametrize("gamma", [0.25, 0.7])
def test_l1_equals_caputo_of_interpolant(gamma):
    g = GradedTimeGrid(1.5, 12, 2.0)
    u = np.exp(np.sin(3 * g.nodes))
    d = caputo_l1(ScalarTrajectory(g, u), gamma).values
    ref = [_caputo_of_interpolant(g.nodes, u, gamma, j) for j in range(1, 13)]
    np.testing.assert_allclose(d[1:], ref, rtol=1e-9, atol=1e-12)


def test_left_derivative_is_caputo_plus_boundary_term():
    g = GradedTimeGrid(1.0, 64, 2.0)
    u = traj(g, lambda t: 1 + np.sin(t))
    d = left_rl_derivative(u, 0.4).values[1:]
    c = caputo_l1(u, 0.4).values[1:] + g.nodes[1:] ** -0.4 / math.gamma(0.6)
    np.testing.assert_allclose(d, c, rtol=1e-14)


def test_multi_column_matches_single():
    from subdiff.fracops import caputo_l1_array
    g = GradedTimeGrid(1.0, 40, 2.0)
    U = np.column_stack([np.sin(g.nodes), np.cos(g.nodes)])
    D = caputo_l1_array(g.nodes, U, 0.5)
    np.testing.assert_array_equal(D[:, 1], caputo_l1(traj(g, np.cos), 0.5).values)


def test_grid_validation():
    for bad in ([0.0], [0.1, 0.5], [0.0, 0.5, 0.5]):
        with pytest.raises(ValueError):
            TimeGrid(np.array(bad))
    for args in ((0.0, 4, 1.0), (1.0, 0, 1.0), (1.0, 4, 0.5)):
        with pytest.raises(ValueError):
            GradedTimeGrid(*args)
    g = GradedTimeGrid(2.0, 4, 2.0)
    np.testing.assert_allclose(g.nodes, 2.0 * (np.arange(5) / 4) ** 2)
    assert g.reversed().T == 2.0
    assert g.trapezoid_weights().sum() == pytest.approx(2.0)


def test_trajectory_validation():
    g = GradedTimeGrid(1.0, 4, 1.0)
    with pytest.raises(ValueError):
        ScalarTrajectory(g, np.zeros(4))
    with pytest.raises(ValueError):
        ScalarTrajectory(g, np.array([0, 1, np.nan, 0, 0]))
    ScalarTrajectory(g, np.array([0, 1, np.inf, 0, 0]))
    with pytest.raises(ValueError):
        caputo_l1(ScalarTrajectory(g, np.zeros(5)), 1.0)
    with pytest.raises(ValueError):
        rl_integral(ScalarTrajectory(g, np.zeros(5)), 0.5, "sideways")
