"""Invariant suite behind ``subdiff verify``.

Each check returns a :class:`CheckResult` with the measured value and the
bound it is held to.  Problem-dependent checks run on the configured basis,
grids and control problem; the rest use small fixed instances.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np
from scipy import special

from .adjoint import (ControlProblem, control_norm, duality_gap, finite_difference_check, solve_adjoint,
                      solve_linearized, vi_residual)
from .config import ProblemConfig
from .control import ControlSignal, project_admissible, tracking_terms
from .forward import Nonlinearity, ProblemIndices, energy_functional, mild_residual, solve_forward
from .fracops import GradedTimeGrid, ScalarTrajectory, caputo_l1, coercivity_value, ibp_residual, rl_integral
from .propagators import PropagatorContext, convolve_P_array
from .specfun import ml_eval, wright_moment
from .spectral import (OperatorSpec, SpectralField, analyze, apply_A_power, build_basis, gram_matrix,
                       synthesize, valpha_norm, wentzell_form)


@dataclass
class CheckResult:
    name: str
    module: str
    value: float
    bound: str
    passed: bool
    seconds: float = 0.0

    def to_dict(self) -> dict:
        return {"name": self.name, "module": self.module, "value": self.value, "bound": self.bound,
                "passed": self.passed, "seconds": self.seconds}


def _le(value: float, tol: float) -> tuple[float, str, bool]:
    return float(value), f"<= {tol:g}", bool(value <= tol)


# --------------------------------------------------------------------------
# specfun
# --------------------------------------------------------------------------

def check_ml_exp(cfg):
    x = np.linspace(-20.0, 2.0, 441)
    return _le(np.max(np.abs(ml_eval(1.0, 1.0, x) - np.exp(x)) / np.maximum(1.0, np.exp(x))), 1e-10)


def check_ml_erfc(cfg):
    return _le(abs(ml_eval(0.5, 1.0, -1.0) - math.exp(1.0) * math.erfc(1.0)), 1e-9)


def check_ml_recurrence(cfg):
    # E_{a,b}(x) = 1/Gamma(b) + x E_{a,a+b}(x)
    x = np.linspace(-30.0, 1.5, 64)
    err = 0.0
    for a, b in ((0.3, 1.0), (0.6, 0.6), (0.9, 1.3)):
        lhs = ml_eval(a, b, x)
        rhs = special.rgamma(b) + x * ml_eval(a, a + b, x)
        err = max(err, float(np.max(np.abs(lhs - rhs))))
    return _le(err, 1e-9)


def check_wright_moments(cfg):
    err = 0.0
    for g in (0.3, 0.5, 0.7):
        for p in (0, 1, 2):
            exact = special.gamma(p + 1) / special.gamma(g * p + 1)
            err = max(err, abs(wright_moment(g, p) - exact))
    return _le(err, 1e-6)


# --------------------------------------------------------------------------
# spectral
# --------------------------------------------------------------------------

def check_gram(cfg):
    G = gram_matrix(cfg.basis)
    return _le(np.max(np.abs(G - np.eye(G.shape[0]))), 5e-8)


def check_roundtrip(cfg):
    b = cfg.basis
    c = np.random.default_rng(cfg.seed).standard_normal(b.n_modes)
    back = analyze(synthesize(SpectralField(c, b)), b).coefficients
    return _le(np.max(np.abs(back - c)), 1e-8)


def check_power_semigroup(cfg):
    b = cfg.basis
    u = SpectralField(np.random.default_rng(cfg.seed).standard_normal(b.n_modes), b)
    half = apply_A_power(apply_A_power(u, 0.5), 0.5).coefficients
    full = apply_A_power(u, 1.0).coefficients
    norm_ok = abs(valpha_norm(u, 0.0) - np.linalg.norm(u.coefficients))
    return _le(max(np.max(np.abs(half - full)) / np.max(np.abs(full)), norm_ok), 1e-12)


def check_weak_form(cfg):
    """Eigen-pair residual of the bilinear form against smooth test functions."""
    b = cfg.basis
    if b.spec.kind != "wentzell_robin_1d":
        b = build_basis(OperatorSpec("wentzell_robin_1d", 1.0, robin=(1.0, 1.0)), 8)
    L = b.spec.domain_length
    tests = [(lambda x: np.cos(x), lambda x: -np.sin(x)),
             (lambda x: 1 + x * (L - x), lambda x: L - 2 * x),
             (lambda x: np.exp(-x), lambda x: -np.exp(-x))]
    worst = 0.0
    for n in range(b.n_modes):
        e = np.zeros(b.n_modes)
        e[n] = 1.0
        for v, dv in tests:
            form, mass = wentzell_form(b, e, v, dv)
            worst = max(worst, abs(form - b.eigenvalues[n] * mass) / b.eigenvalues[n])
    return _le(worst, 1e-6)


# --------------------------------------------------------------------------
# fracops
# --------------------------------------------------------------------------

def check_l1_linear_exact(cfg):
    g = cfg.idx.gamma
    grid = GradedTimeGrid(1.0, 32, 2.0)
    d = caputo_l1(ScalarTrajectory(grid, grid.nodes), g).values
    exact = grid.nodes ** (1 - g) / special.gamma(2 - g)
    return _le(np.max(np.abs(d - exact)), 1e-12)


def check_rl_power(cfg):
    # I^a [t] = t^(1+a)/Gamma(2+a), exact for the linear interpolant
    grid = GradedTimeGrid(1.0, 32, 2.0)
    a = 1.0 - cfg.idx.gamma
    I = rl_integral(ScalarTrajectory(grid, grid.nodes), a).values
    return _le(np.max(np.abs(I - grid.nodes ** (1 + a) / special.gamma(2 + a))), 1e-12)


def check_ibp(cfg):
    grid = GradedTimeGrid(1.0, 512, 1.0)
    t = grid.nodes
    u = ScalarTrajectory(grid, 1.0 + t**2)
    v = ScalarTrajectory(grid, np.cos(t))
    return _le(ibp_residual(u, v, cfg.idx.gamma), 1e-3)


def check_coercivity(cfg):
    rng = np.random.default_rng(cfg.seed)
    worst = math.inf
    for _ in range(5):
        c = rng.standard_normal((cfg.grid.nodes.size, 3))
        worst = min(worst, coercivity_value(c, cfg.grid, cfg.idx.gamma))
    return float(worst), ">= -1e-8", bool(worst >= -1e-8)


# --------------------------------------------------------------------------
# propagators
# --------------------------------------------------------------------------

def check_propagator_identity(cfg):
    """``lambda K(t) = 1 - E_{g,1}(-lambda t^g)`` and convolution of 1 equals ``K``."""
    ctx = PropagatorContext(cfg.basis, cfg.idx.gamma)
    lam = cfg.basis.eigenvalues
    t = cfg.grid.nodes
    K = ctx.kernel_mass(t)
    S = np.vstack([ctx.s_factors(tt) for tt in t])
    e1 = np.max(np.abs(lam * K - (1.0 - S)))
    conv = convolve_P_array(ctx, cfg.grid, np.ones((t.size, lam.size)))
    e2 = np.max(np.abs(conv - K))
    return _le(max(e1, e2), 1e-10)


def check_contraction(cfg):
    ctx = PropagatorContext(cfg.basis, cfg.idx.gamma)
    s = np.vstack([ctx.s_factors(tt) for tt in cfg.grid.nodes])
    worst = float(np.max(np.abs(s)))
    return worst, "<= 1", bool(worst <= 1.0 + 1e-14)


# --------------------------------------------------------------------------
# forward
# --------------------------------------------------------------------------

def _state(cfg):
    return solve_forward(cfg.basis, cfg.idx, cfg.nl, cfg.B, cfg.z0, cfg.u0, cfg.grid, cfg.picard)


def check_mild_residual(cfg):
    traj, rep = _state(cfg)
    if not traj.completed:
        return math.inf, "forward solve completes", False
    r = mild_residual(traj, cfg.idx, cfg.nl, cfg.B, cfg.z0)
    return _le(float(r.max()) / max(1.0, float(np.max(np.abs(traj.states)))), 1e-8)


def check_determinism(cfg):
    a, _ = _state(cfg)
    b, _ = _state(cfg)
    same = a.to_csv() == b.to_csv()
    return float(not same), "== 0 (byte-identical)", same


def check_linear_exactness(cfg):
    b = cfg.basis
    idx = ProblemIndices(cfg.idx.gamma)
    grid = GradedTimeGrid(cfg.grid.T, 512, 2.0)
    c0 = np.ones(b.n_modes)
    traj, _ = solve_forward(b, idx, None, None, None, SpectralField(c0, b), grid)
    t = grid.nodes
    exact = np.column_stack([ml_eval(idx.gamma, 1.0, -lam * t**idx.gamma) for lam in b.eigenvalues])
    return _le(np.max(np.abs(traj.states - exact)), 1e-4)


def check_energy(cfg):
    b = build_basis(OperatorSpec("neumann_laplacian_1d", shift=3.0), 8)
    nl = Nonlinearity.allen_cahn(0.5, 1.0)
    grid = GradedTimeGrid(1.0, 64, 2.0)
    u0 = SpectralField(np.array([0.4, 0.3, -0.2, 0.1, 0, 0, 0, 0.0]), b)
    traj, _ = solve_forward(b, ProblemIndices(0.5), nl, None, None, u0, grid)
    E = energy_functional(traj, nl, None, None)
    rise = float(np.max(np.diff(E), initial=0.0))
    return _le(rise, 1e-6)


# --------------------------------------------------------------------------
# control
# --------------------------------------------------------------------------

def check_B_adjoint(cfg):
    rng = np.random.default_rng(cfg.seed)
    z = rng.standard_normal(cfg.B.n_control)
    c = rng.standard_normal(cfg.basis.n_modes)
    lhs = float(np.dot(cfg.B.apply_array(z), c))
    rhs = float(cfg.B.l2_inner(z, cfg.B.adjoint_array(c)))
    return _le(abs(lhs - rhs) / max(abs(lhs), 1e-30), 1e-12)


def check_projection(cfg):
    rng = np.random.default_rng(cfg.seed)
    z = ControlSignal(cfg.grid, 3 * rng.standard_normal(cfg.z0.values.shape))
    p1 = project_admissible(z, cfg.aset, cfg.B.weights)
    p2 = project_admissible(p1, cfg.aset, cfg.B.weights)
    inbox = np.all(p1.values >= np.asarray(cfg.aset.z_a)) and np.all(p1.values <= np.asarray(cfg.aset.z_b))
    err = float(np.max(np.abs(p2.values - p1.values)))
    return err, "== 0 and inside the box", bool(err == 0.0 and inbox)


def check_csv_roundtrip(cfg):
    rng = np.random.default_rng(cfg.seed)
    z = ControlSignal(cfg.grid, rng.standard_normal(cfg.z0.values.shape))
    back = ControlSignal.from_csv(z.to_csv())
    same = np.array_equal(back.values, z.values) and np.array_equal(back.grid.nodes, z.grid.nodes)
    return float(not same), "== 0 (exact)", bool(same)


# --------------------------------------------------------------------------
# adjoint
# --------------------------------------------------------------------------

def _linearization(cfg, prob: ControlProblem):
    traj, _ = prob.state(cfg.z0)
    _, psi = tracking_terms(traj.states, cfg.basis, cfg.cost)
    h = cfg.z0.with_values(np.random.default_rng(cfg.seed).standard_normal(cfg.z0.values.shape))
    eta = solve_linearized(traj, cfg.nl, cfg.B, h, cfg.grid, cfg.idx)
    w = solve_adjoint(traj, cfg.nl, psi, cfg.grid, cfg.idx, "discrete")
    return psi, eta, w, h


def check_duality(cfg):
    psi, eta, w, h = _linearization(cfg, cfg.problem())
    return _le(duality_gap(psi, eta, w, h, cfg.B), 1e-6)


def check_terminal_condition(cfg):
    _, _, w, _ = _linearization(cfg, cfg.problem())
    worst = 0.0
    for n in range(w.states.shape[1]):
        col = ScalarTrajectory(cfg.grid, w.states[:, n])
        worst = max(worst, abs(rl_integral(col, 1.0 - cfg.idx.gamma, "right").values[-1]))
    return _le(worst, 1e-12)


def check_gradient_fd(cfg):
    res = finite_difference_check(cfg.problem(), cfg.cost, cfg.z0, cfg.gradcheck_eps, cfg.seed)
    return _le(res["min_relative_error"], 1e-3)


def check_vi_zero(cfg):
    zero = cfg.z0.with_values(np.zeros_like(cfg.z0.values))
    z = project_admissible(cfg.z0, cfg.aset, cfg.B.weights)
    return _le(vi_residual(z, zero, cfg.aset, 1.0, cfg.B.weights) + control_norm(zero, cfg.B.weights), 0.0)


CHECKS = [
    ("ml_exp", "specfun", check_ml_exp),
    ("ml_erfc", "specfun", check_ml_erfc),
    ("ml_recurrence", "specfun", check_ml_recurrence),
    ("wright_moments", "specfun", check_wright_moments),
    ("gram_identity", "spectral", check_gram),
    ("analyze_synthesize_roundtrip", "spectral", check_roundtrip),
    ("power_semigroup", "spectral", check_power_semigroup),
    ("wentzell_weak_form", "spectral", check_weak_form),
    ("l1_exact_on_linear", "fracops", check_l1_linear_exact),
    ("rl_integral_power", "fracops", check_rl_power),
    ("integration_by_parts", "fracops", check_ibp),
    ("coercivity", "fracops", check_coercivity),
    ("kernel_mass_identity", "propagators", check_propagator_identity),
    ("resolvent_contraction", "propagators", check_contraction),
    ("mild_residual", "forward", check_mild_residual),
    ("determinism", "forward", check_determinism),
    ("linear_exactness", "forward", check_linear_exactness),
    ("energy_monotone", "forward", check_energy),
    ("B_adjointness", "control_cost", check_B_adjoint),
    ("projection_idempotent", "control_cost", check_projection),
    ("control_csv_roundtrip", "control_cost", check_csv_roundtrip),
    ("duality_gap", "adjoint_opt", check_duality),
    ("adjoint_terminal_condition", "adjoint_opt", check_terminal_condition),
    ("gradient_vs_fd", "adjoint_opt", check_gradient_fd),
    ("vi_residual_zero_gradient", "adjoint_opt", check_vi_zero),
]


def run_verify(cfg: ProblemConfig, timings: bool = False) -> list[CheckResult]:
    """Run every check; an exception inside a check counts as a failure."""
    out = []
    for name, module, fn in CHECKS:
        t0 = time.perf_counter()
        try:
            value, bound, ok = fn(cfg)
        except Exception as exc:  # report, do not abort the suite
            value, bound, ok = math.nan, f"raised {type(exc).__name__}: {exc}", False
        dt = time.perf_counter() - t0
        out.append(CheckResult(name, module, value, bound, ok, round(dt, 3) if timings else 0.0))
    return out


def format_table(results: list[CheckResult]) -> str:
    w = max(len(r.name) for r in results)
    lines = [f"{'check':<{w}}  {'module':<12}  {'value':>12}  bound"]
    for r in results:
        mark = "PASS" if r.passed else "FAIL"
        lines.append(f"{r.name:<{w}}  {r.module:<12}  {r.value:>12.3e}  {r.bound}  {mark}")
    return "\n".join(lines)
