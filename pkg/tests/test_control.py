from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate

from subdiff.control import (
    AdmissibleSet, ControlOperator, ControlSignal, CostSpec, apply_B, apply_B_star, derivative_violations,
    eval_cost, project_admissible, zrho_norm,
)
from subdiff.forward import Trajectory
from subdiff.fracops import GradedTimeGrid, GridMismatchError, TimeGrid
from subdiff.spectral import OperatorSpec, PhysicalGrid, SpectralField, build_basis

DIR = build_basis(OperatorSpec("dirichlet_laplacian_1d"), 6)
NEU = build_basis(OperatorSpec("neumann_laplacian_1d", shift=1.0), 6)
WEN = build_basis(OperatorSpec("wentzell_robin_1d", domain_length=1.0, robin=(1.0, 2.0)), 6)
OPS = [ControlOperator("interior_identity", DIR), ControlOperator("interior_identity", NEU),
       ControlOperator("interior_identity", WEN), ControlOperator("boundary_injection", WEN)]


def test_apply_B_zero():
    for op in OPS:
        assert np.all(apply_B(op, np.zeros(op.n_control)).coefficients == 0.0)
        assert np.all(apply_B_star(op, SpectralField(np.zeros(6), op.basis)) == 0.0)


def test_interior_identity_on_mode_samples():
    op = ControlOperator("interior_identity", DIR)
    e = apply_B(op, DIR.interior_values[:, 1]).coefficients
    np.testing.assert_allclose(e, np.eye(6)[1], atol=1e-12)


def test_boundary_injection_of_ones_is_trace_sum():
    op = ControlOperator("boundary_injection", WEN)
    c = apply_B(op, np.ones(2)).coefficients
    np.testing.assert_allclose(c, WEN.eval_modes([0.0]).ravel() + WEN.eval_modes([1.0]).ravel(), atol=1e-14)


def test_boundary_adjoint_single_mode():
    op = ControlOperator("boundary_injection", WEN)
    v = np.zeros(6)
    v[2] = 1.5
    np.testing.assert_allclose(apply_B_star(op, SpectralField(v, WEN)), 1.5 * WEN.trace_values[:, 2], atol=1e-15)


@pytest.mark.parametrize("op", OPS, ids=lambda o: f"{o.kind}-{o.basis.spec.kind}")
def test_adjointness_random_pairs(op):
    rng = np.random.default_rng(5)
    for _ in range(100):
        z = rng.standard_normal(op.n_control)
        v = rng.standard_normal(6)
        lhs = apply_B(op, z).coefficients @ v
        rhs = op.l2_inner(z, apply_B_star(op, SpectralField(v, op.basis)))
        assert abs(lhs - rhs) <= 1e-10


@pytest.mark.parametrize("op", OPS, ids=lambda o: f"{o.kind}-{o.basis.spec.kind}")
def test_B_bounded_on_random_samples(op):
    rng = np.random.default_rng(6)
    for _ in range(20):
        z = rng.standard_normal(op.n_control)
        assert np.linalg.norm(apply_B(op, z).coefficients) <= math.sqrt(op.l2_inner(z, z)) * (1 + 1e-10)


def test_operator_validation():
    with pytest.raises(ValueError):
        ControlOperator("boundary_injection", DIR)
    with pytest.raises(ValueError):
        ControlOperator("bogus", DIR)
    with pytest.raises(ValueError):
        OPS[0].apply_array(np.zeros(3))
    with pytest.raises(ValueError):
        OPS[0].adjoint_array(np.zeros(3))


# --------------------------------------------------------------------------
# Z_rho norm
# --------------------------------------------------------------------------

def test_zrho_zero_and_constant():
    g = GradedTimeGrid(1.0, 32, 2.0)
    assert zrho_norm(ControlSignal.zeros(g, 3), 0.75) == 0.0
    c = np.array([1.0, 2.0, 2.0])
    assert zrho_norm(ControlSignal(g, np.tile(c, (33, 1))), 0.75) == pytest.approx(3.0, rel=1e-14)


@pytest.mark.parametrize("rho", [0.6, 0.75, 1.0])
def test_zrho_power_profile(rho):
    g = GradedTimeGrid(2.0, 64, 2.0)
    c = np.array([3.0, 4.0])
    z = ControlSignal(g, np.outer(g.nodes**rho, c))
    assert zrho_norm(z, rho) == pytest.approx(2.0**rho * 5.0 + rho * 5.0, rel=1e-10)


def test_zrho_weights():
    g = GradedTimeGrid(1.0, 8, 1.0)
    z = ControlSignal(g, np.tile([1.0, 1.0], (9, 1)))
    assert zrho_norm(z, 0.8, np.array([0.25, 0.75])) == pytest.approx(1.0)


# --------------------------------------------------------------------------
# admissible set and projection
# --------------------------------------------------------------------------

@pytest.mark.parametrize("kw", [{"rho": 0.5}, {"rho": 0.3}, {"rho": 1.2}, {"M": 0.0}, {"z_a": 1.0, "z_b": 0.0}])
def test_admissible_set_validation(kw):
    with pytest.raises(ValueError):
        AdmissibleSet(**kw)


def test_projection_examples():
    g = GradedTimeGrid(1.0, 16, 2.0)
    aset = AdmissibleSet(-1.0, 1.0)
    feasible = ControlSignal(g, 0.5 * np.sin(np.outer(g.nodes, [1.0, 2.0])))
    assert np.array_equal(project_admissible(feasible, aset).values, feasible.values)
    above = ControlSignal(g, np.full((17, 2), 3.0))
    assert np.all(project_admissible(above, aset).values == 1.0)


@given(st.lists(st.floats(-5, 5), min_size=18, max_size=18), st.lists(st.floats(-5, 5), min_size=18, max_size=18))
def test_projection_idempotent_and_nonexpansive(a, b):
    g = GradedTimeGrid(1.0, 8, 1.0)
    aset = AdmissibleSet(np.array([-1.0, -0.5]), np.array([0.5, 2.0]))
    za = ControlSignal(g, np.reshape(a, (9, 2)))
    zb = ControlSignal(g, np.reshape(b, (9, 2)))
    pa, pb = project_admissible(za, aset), project_admissible(zb, aset)
    assert np.array_equal(project_admissible(pa, aset).values, pa.values)
    assert np.linalg.norm(pa.values - pb.values) <= np.linalg.norm(za.values - zb.values) + 1e-12


def test_derivative_bound_check_and_mollify():
    g = GradedTimeGrid(1.0, 64, 1.0)
    step = ControlSignal(g, np.outer(g.nodes >= 0.5, [2.0]))
    w = np.ones(1)
    plain = AdmissibleSet(-5, 5, M=1.0, rho=0.75)
    out, rep = project_admissible(step, plain, w, return_report=True)
    assert not rep.feasible and not rep.mollified and rep.violating_cells == 1
    assert rep.max_violation == pytest.approx(2.0 - (0.5**0.75 - (31 / 64) ** 0.75) / 0.75)
    smooth = AdmissibleSet(-5, 5, M=1.0, rho=0.75, mollify=True)
    out2, rep2 = project_admissible(step, smooth, w, return_report=True)
    assert rep2.mollified and rep2.max_violation < rep.max_violation
    assert np.all(derivative_violations(out2, smooth, w) == 0) == rep2.feasible


def test_infinite_M_never_violates():
    g = GradedTimeGrid(1.0, 8, 1.0)
    z = ControlSignal(g, np.outer(g.nodes >= 0.5, [100.0]))
    assert np.all(derivative_violations(z, AdmissibleSet(), np.ones(1)) == 0)


# --------------------------------------------------------------------------
# cost
# --------------------------------------------------------------------------

def _traj(basis, grid, states):
    return Trajectory(grid, basis, np.asarray(states, float))


def test_cost_zero_when_tracking_exactly():
    g = GradedTimeGrid(1.0, 16, 2.0)
    op = ControlOperator("interior_identity", DIR)
    states = np.outer(np.cos(g.nodes), np.r_[1.0, 0.5, 0, 0, 0, 0])
    zq = states @ DIR.interior_values.T
    cs = CostSpec(a1=1.0, zeta=0.0, z_Q=zq)
    assert eval_cost(_traj(DIR, g, states), ControlSignal.zeros(g, op.n_control), cs, op) == pytest.approx(0, abs=1e-28)


def test_cost_control_term_only():
    g = GradedTimeGrid(1.0, 10, 1.0)
    op = ControlOperator("interior_identity", DIR)
    c = np.sin(DIR.grid.nodes)
    cs = CostSpec(a1=0.0, a2=1.0, zeta=2.0)
    z = ControlSignal(g, np.tile(c, (11, 1)))
    # a2 term vanishes because u = 0
    val = eval_cost(_traj(DIR, g, np.zeros((11, 6))), z, cs, op)
    assert val == pytest.approx(op.l2_inner(c, c), rel=1e-14)


def test_cost_against_fine_quadrature():
    basis = build_basis(OperatorSpec("dirichlet_laplacian_1d"), 4, PhysicalGrid.uniform(math.pi, 1024))
    op = ControlOperator("interior_identity", basis)
    g = GradedTimeGrid(1.0, 2048, 1.0)
    t, x = g.nodes, basis.grid.nodes
    coef = lambda s: np.array([math.cos(s), s * s, math.sin(2 * s), 0.1])
    zq_fn = lambda s, y: 0.5 * s * np.sin(y) + 0.2 * np.cos(y)
    zfn = lambda s, y: (1 + s) * np.cos(3 * y)
    states = np.array([coef(s) for s in t])
    cs = CostSpec(a1=1.3, zeta=0.7, z_Q=np.array([zq_fn(s, x) for s in t]))
    z = ControlSignal(g, np.array([zfn(s, x) for s in t]))
    val = eval_cost(_traj(basis, g, states), z, cs, op)

    gx, gw = np.polynomial.legendre.leggauss(80)
    y, wy = 0.5 * math.pi * (gx + 1), 0.5 * math.pi * gw
    phi = basis.eval_modes(y)

    def integrand(s):
        u = phi @ coef(s)
        return 0.5 * 1.3 * np.dot(wy, (u - zq_fn(s, y)) ** 2) + 0.5 * 0.7 * np.dot(wy, zfn(s, y) ** 2)

    ref = integrate.quad(integrand, 0.0, 1.0, epsabs=1e-13, epsrel=1e-13)[0]
    assert abs(val - ref) <= 1e-6


def test_cost_boundary_term_on_wentzell():
    g = GradedTimeGrid(1.0, 8, 1.0)
    op = ControlOperator("boundary_injection", WEN)
    states = np.tile(np.eye(6)[0], (9, 1))
    cs = CostSpec(a1=0.0, a2=2.0)
    val = eval_cost(_traj(WEN, g, states), ControlSignal.zeros(g, 2), cs, op)
    assert val == pytest.approx(np.sum(WEN.trace_values[:, 0] ** 2), rel=1e-14)


def test_J2_convexity():
    rng = np.random.default_rng(8)
    g = GradedTimeGrid(1.0, 8, 2.0)
    op = ControlOperator("interior_identity", NEU)
    cs = CostSpec(a1=1.0, zeta=0.5)
    zero = _traj(NEU, g, np.zeros((9, 6)))
    for _ in range(20):
        z1, z2 = (ControlSignal(g, rng.standard_normal((9, op.n_control))) for _ in range(2))
        mid = ControlSignal(g, 0.5 * (z1.values + z2.values))
        j = lambda z: eval_cost(zero, z, cs, op)
        assert j(mid) <= 0.5 * (j(z1) + j(z2)) + 1e-12


def test_cost_validation():
    for kw in ({"a1": -1.0}, {"a1": 0.0, "a2": 0.0}, {"zeta": -1.0}):
        with pytest.raises(ValueError):
            CostSpec(**kw)
    g, g2 = GradedTimeGrid(1.0, 8, 2.0), GradedTimeGrid(1.0, 8, 1.0)
    op = ControlOperator("interior_identity", NEU)
    with pytest.raises(GridMismatchError):
        eval_cost(_traj(NEU, g, np.zeros((9, 6))), ControlSignal.zeros(g2, op.n_control), CostSpec(), op)
    with pytest.raises(GridMismatchError):
        eval_cost(_traj(NEU, g, np.zeros((9, 6))), ControlSignal.zeros(g, op.n_control),
                  CostSpec(z_Q=np.zeros((9, 3))), op)


def test_control_csv_roundtrip():
    g = GradedTimeGrid(1.0, 12, 2.0)
    z = ControlSignal(g, np.random.default_rng(9).standard_normal((13, 3)))
    back = ControlSignal.from_csv(z.to_csv())
    assert np.array_equal(back.values, z.values) and np.array_equal(back.grid.nodes, g.nodes)
    assert z.to_csv().splitlines()[0] == "t,z_1,z_2,z_3"


def test_control_signal_validation():
    g = TimeGrid(np.array([0.0, 0.5, 1.0]))
    with pytest.raises(ValueError):
        ControlSignal(g, np.zeros(3))
    with pytest.raises(ValueError):
        ControlSignal(g, np.array([[0.0], [np.inf], [0.0]]))
