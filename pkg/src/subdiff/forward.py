"""Semilinear mild-solution solver.

The discrete mild solution on nodes ``t_0 < ... < t_n`` is

    u_j = S(t_j) u_0 + sum_{k=1}^{j} W_{jk} (g_{k-1} + g_k) / 2,
    g_k = f(u_k) + B z(t_k),

with ``W_{jk}`` the exact kernel masses of ``P`` over cell ``k``.  The only
unknown at step ``j`` is ``u_j`` inside ``g_j``; it is found by Picard
iteration, halving the step locally when the iteration fails to contract.
"""
from __future__ import annotations

import csv
import functools
import io
import json
import logging
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import kernels
from .control import ControlOperator, ControlSignal
from .fracops import GridMismatchError, TimeGrid
from .propagators import PropagatorContext, kernel_table, midpoint_forcing
from .specfun import SeriesControl
from .spectral import EigenBasis, SpectralField, valpha_norms

log = logging.getLogger(__name__)

NONLINEARITY_KINDS = ("allen_cahn", "fisher_kpp", "nonlocal_burgers", "polynomial")


class ConfigurationError(ValueError):
    pass


class NonlinearityError(ArithmeticError):
    pass


class SolverError(RuntimeError):
    pass


# --------------------------------------------------------------------------
# exponent bookkeeping
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ProblemIndices:
    gamma: float
    alpha: float = 0.0
    alpha_tilde: float = 0.0
    beta: float = 0.0
    q: float = math.inf
    rho: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise ConfigurationError("gamma must lie in (0, 1]")
        a, at, b = self.alpha, self.alpha_tilde, self.beta
        if not (b <= a < b + 2 and at <= a < at + 2):
            raise ConfigurationError(
                f"alpha={a} must lie in [beta, beta+2) and [alpha_tilde, alpha_tilde+2)")
        qmin = 2.0 / (self.gamma * (2 - a + at))
        if not self.q > qmin:
            raise ConfigurationError(f"q must exceed 2/(gamma(2-alpha+alpha_tilde)) = {qmin:.6g}")
        if not 0.0 < self.rho <= 1.0:
            raise ConfigurationError("rho must lie in (0, 1]")
        if not self.theta > 0:
            raise ConfigurationError(f"theta = {self.theta:.6g} is not positive")

    @property
    def theta(self) -> float:
        g, a, at, b = self.gamma, self.alpha, self.alpha_tilde, self.beta
        base = 0.5 * g * (2 - a + at)
        return min(base - 1.0 / self.q, 0.5 * g * (2 - a + b), base + self.rho)

    @property
    def xi(self) -> float:
        """A representative of ``(0, theta/(1-theta))``: its midpoint, or 1 when theta >= 1."""
        th = self.theta
        return th / (2 * (1 - th)) if th < 1 else 1.0

    @property
    def sigma(self) -> float:
        return min(1.0 + self.xi, self.q)

    def to_dict(self) -> dict:
        q = self.q if math.isfinite(self.q) else "inf"
        return {"gamma": self.gamma, "alpha": self.alpha, "alpha_tilde": self.alpha_tilde,
                "beta": self.beta, "q": q, "rho": self.rho,
                "theta": self.theta, "xi": self.xi, "sigma": self.sigma}


def theta_exponent(idx: ProblemIndices) -> float:
    return idx.theta


# --------------------------------------------------------------------------
# nonlinearities
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Nonlinearity:
    """Reaction term ``f`` with ``f(0) = 0``.

    Parameters live in ``params``: ``c1, c2`` (Allen-Cahn, ``f = -(4 c1 u^3 - 2 c2 u)``),
    ``r, K`` (Fisher-KPP, ``f = r u (1 - u/K)``), ``coefficients`` (polynomial
    ``sum a_k u^k`` with ``a_0 = 0``), ``amplitude, width`` (nonlocal Burgers,
    ``f = -u (G * u)`` with ``G = J'`` for a Gaussian ``J``).  A custom Burgers
    kernel is given as ``dJ``, a callable returning ``J'`` samples.
    """

    kind: str
    params: tuple = ()

    def __post_init__(self):
        if self.kind not in NONLINEARITY_KINDS:
            raise ValueError(f"unknown nonlinearity {self.kind!r}")
        p = self.p
        if self.kind == "allen_cahn" and not (p["c2"] > p["c1"] > 0):
            raise ValueError("allen_cahn needs c2 > c1 > 0")
        if self.kind == "fisher_kpp" and not (p["r"] > 0 and p["K"] > 0):
            raise ValueError("fisher_kpp needs r > 0 and K > 0")
        if self.kind == "polynomial" and (len(p["coefficients"]) == 0 or p["coefficients"][0] != 0):
            raise ValueError("polynomial coefficients must start with a_0 = 0")
        if self.kind == "nonlocal_burgers" and "dJ" not in p and not p.get("width", 0) > 0:
            raise ValueError("nonlocal_burgers needs a positive kernel width or a custom dJ")

    @property
    def p(self) -> dict:
        return dict(self.params)

    @classmethod
    def allen_cahn(cls, c1: float = 1.0, c2: float = 2.0):
        return cls("allen_cahn", (("c1", float(c1)), ("c2", float(c2))))

    @classmethod
    def fisher_kpp(cls, r: float = 1.0, K: float = 1.0):
        return cls("fisher_kpp", (("r", float(r)), ("K", float(K))))

    @classmethod
    def polynomial(cls, coefficients):
        return cls("polynomial", (("coefficients", tuple(float(a) for a in coefficients)),))

    @classmethod
    def nonlocal_burgers(cls, amplitude: float = 1.0, width: float = 0.3, dJ: Callable | None = None):
        ps = [("amplitude", float(amplitude)), ("width", float(width))]
        if dJ is not None:
            ps.append(("dJ", dJ))
        return cls("nonlocal_burgers", tuple(ps))

    @property
    def is_local(self) -> bool:
        return self.kind != "nonlocal_burgers"

    def to_dict(self) -> dict:
        return {"kind": self.kind, **{k: v for k, v in self.p.items() if k != "dJ"}}

    # pointwise rules -------------------------------------------------------
    def f(self, u):
        p = self.p
        if self.kind == "allen_cahn":
            return -(4 * p["c1"] * u**3 - 2 * p["c2"] * u)
        if self.kind == "fisher_kpp":
            return p["r"] * u * (1 - u / p["K"])
        if self.kind == "polynomial":
            return np.polynomial.polynomial.polyval(u, p["coefficients"])
        raise NotImplementedError

    def fp(self, u):
        p = self.p
        if self.kind == "allen_cahn":
            return -12 * p["c1"] * u**2 + 2 * p["c2"]
        if self.kind == "fisher_kpp":
            return p["r"] * (1 - 2 * u / p["K"])
        if self.kind == "polynomial":
            return np.polynomial.polynomial.polyval(u, np.polynomial.polynomial.polyder(p["coefficients"]))
        raise NotImplementedError

    def fpp(self, u):
        p = self.p
        if self.kind == "allen_cahn":
            return -24 * p["c1"] * u
        if self.kind == "fisher_kpp":
            return np.full_like(np.asarray(u, float), -2 * p["r"] / p["K"])
        if self.kind == "polynomial":
            return np.polynomial.polynomial.polyval(u, np.polynomial.polynomial.polyder(p["coefficients"], 2))
        raise NotImplementedError

    def F(self, u):
        """Potential ``int_0^u f``."""
        p = self.p
        if self.kind == "allen_cahn":
            return -(p["c1"] * u**4 - p["c2"] * u**2)
        if self.kind == "fisher_kpp":
            return p["r"] * (u**2 / 2 - u**3 / (3 * p["K"]))
        if self.kind == "polynomial":
            return np.polynomial.polynomial.polyval(u, np.polynomial.polynomial.polyint(p["coefficients"]))
        raise NotImplementedError("the nonlocal Burgers term has no pointwise potential")


@functools.lru_cache(maxsize=16)
def _burgers_matrix(nl: Nonlinearity, grid) -> np.ndarray:
    """Quadrature matrix of ``v -> (G * v)(x_i) = int G(x_i - y) v(y) dy``."""
    x = grid.nodes
    d = x[:, None] - x[None, :]
    p = nl.p
    if "dJ" in p:
        G = np.asarray(p["dJ"](d), dtype=float)
    else:
        w = p["width"]
        G = -d / w**2 * p["amplitude"] * np.exp(-0.5 * (d / w) ** 2)
    return G * grid.quad_weights[None, :]


def _check(v):
    if not np.all(np.isfinite(v)):
        raise NonlinearityError("non-finite value in nonlinearity evaluation")
    return v


def f_coef(nl: Nonlinearity, basis: EigenBasis, c: np.ndarray) -> np.ndarray:
    """Coefficients of ``(f(u), 0)``: the reaction acts on the interior component."""
    phi = basis.interior_values
    w = basis.grid.quad_weights
    u = phi @ c
    if nl.is_local:
        fu = nl.f(u)
    else:
        fu = -u * (_burgers_matrix(nl, basis.grid) @ u)
    return phi.T @ (w * _check(fu))


def fprime_matrix(nl: Nonlinearity, basis: EigenBasis, c: np.ndarray) -> np.ndarray:
    """``N x N`` matrix of ``v -> f'(u) v`` in coefficient space."""
    phi = basis.interior_values
    w = basis.grid.quad_weights
    u = phi @ c
    if nl.is_local:
        return phi.T @ ((w * _check(nl.fp(u)))[:, None] * phi)
    C = _burgers_matrix(nl, basis.grid)
    D = -(C @ u)[:, None] * phi - u[:, None] * (C @ phi)
    return phi.T @ (w[:, None] * _check(D))


def fprime_apply_coef(nl, basis, c, v):
    phi = basis.interior_values
    w = basis.grid.quad_weights
    u, vv = phi @ c, phi @ v
    if nl.is_local:
        out = nl.fp(u) * vv
    else:
        C = _burgers_matrix(nl, basis.grid)
        out = -vv * (C @ u) - u * (C @ vv)
    return phi.T @ (w * _check(out))


def fsecond_apply_coef(nl, basis, c, v, z):
    phi = basis.interior_values
    w = basis.grid.quad_weights
    u, vv, zz = phi @ c, phi @ v, phi @ z
    if nl.is_local:
        out = nl.fpp(u) * vv * zz
    else:
        C = _burgers_matrix(nl, basis.grid)
        out = -vv * (C @ zz) - zz * (C @ vv)
    return phi.T @ (w * _check(out))


def eval_f(nl: Nonlinearity, u: SpectralField) -> SpectralField:
    return SpectralField(f_coef(nl, u.basis, u.coefficients), u.basis)


def eval_fprime_apply(nl: Nonlinearity, u: SpectralField, v: SpectralField) -> SpectralField:
    return SpectralField(fprime_apply_coef(nl, u.basis, u.coefficients, v.coefficients), u.basis)


def eval_fsecond_apply(nl: Nonlinearity, u: SpectralField, v: SpectralField, w: SpectralField) -> SpectralField:
    return SpectralField(fsecond_apply_coef(nl, u.basis, u.coefficients, v.coefficients, w.coefficients),
                         u.basis)


# --------------------------------------------------------------------------
# trajectories and reports
# --------------------------------------------------------------------------

def _fmt(x: float) -> str:
    return f"{x:.17g}"


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Coefficient history on a time grid.

    ``fine_grid``/``fine_states`` hold every node the solver actually used;
    they differ from ``grid``/``states`` only when steps were halved.
    """

    grid: TimeGrid
    basis: EigenBasis
    states: np.ndarray
    status: str = "completed"
    blowup_node: int | None = None
    blowup_time: float | None = None
    fine_grid: TimeGrid | None = None
    fine_states: np.ndarray | None = None

    @property
    def completed(self) -> bool:
        return self.status == "completed"

    def field(self, j: int) -> SpectralField:
        return SpectralField(self.states[j], self.basis)

    def fields(self) -> list[SpectralField]:
        return [self.field(j) for j in range(self.states.shape[0])]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t"] + [f"mode_{n + 1}" for n in range(self.basis.n_modes)])
        for t, row in zip(self.grid.nodes, self.states):
            w.writerow([_fmt(t)] + [_fmt(x) for x in row])
        return buf.getvalue()

    def physical_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        x = self.basis.grid.nodes
        head = ["t"] + [f"x={_fmt(xi)}" for xi in x]
        if self.basis.grid.has_boundary:
            head += ["trace_0", "trace_L"]
        w.writerow(head)
        vals = self.states @ self.basis.mode_values.T
        for t, row in zip(self.grid.nodes, vals):
            w.writerow([_fmt(t)] + [_fmt(v) for v in row])
        return buf.getvalue()


@dataclass
class SolveReport:
    picard_counts: list[int]
    halvings: int
    max_valpha: float
    y_seminorm: float
    blowup: bool
    blowup_node: int | None = None
    blowup_time: float | None = None

    def to_dict(self) -> dict:
        return {"picard_counts": self.picard_counts, "halvings": self.halvings,
                "max_valpha_norm": self.max_valpha, "y_seminorm": self.y_seminorm,
                "blowup": self.blowup, "blowup_node": self.blowup_node,
                "blowup_time": self.blowup_time}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


@dataclass(frozen=True)
class PicardOptions:
    tol: float = 1e-10
    max_iter: int = 60
    contraction_limit: float = 0.5
    max_halvings: int = 40
    blowup_threshold: float = 1e8


# --------------------------------------------------------------------------
# forward solve
# --------------------------------------------------------------------------

def _control_forcing(B: ControlOperator | None, z: ControlSignal | None, grid: TimeGrid, N: int):
    if B is None or z is None:
        return np.zeros((grid.nodes.size, N))
    if not z.grid.same_as(grid):
        raise GridMismatchError("control and state grids differ")
    return B.apply_array(z.values)


class _Marcher:
    """Builds product-integration rows either from the cached table or on the fly."""

    def __init__(self, ctx: PropagatorContext, grid: TimeGrid):
        self.ctx = ctx
        self.grid = grid
        self.table = kernel_table(ctx, grid)
        self.s_nodes = np.vstack([ctx.s_factors(t) for t in grid.nodes])

    def row(self, tau: np.ndarray) -> np.ndarray:
        """``W[i, k]`` for ``k = 0..i`` at the last entry ``tau[i]``."""
        K = self.ctx.kernel_mass(tau[-1] - tau)
        W = np.zeros_like(K)
        W[1:] = K[:-1] - K[1:]
        return W


def solve_forward(basis: EigenBasis, idx: ProblemIndices, nl: Nonlinearity | None,
                  B: ControlOperator | None, z: ControlSignal | None, u0: SpectralField,
                  grid: TimeGrid, picard: PicardOptions | None = None,
                  ctl: SeriesControl | None = None) -> tuple[Trajectory, SolveReport]:
    """March the discrete mild-solution identity over ``grid``."""
    picard = picard or PicardOptions()
    ctx = PropagatorContext(basis, idx.gamma, ctl) if ctl else PropagatorContext(basis, idx.gamma)
    lam = basis.eigenvalues
    alpha = idx.alpha
    N = basis.n_modes
    t = grid.nodes
    n = t.size - 1
    bz_nodes = _control_forcing(B, z, grid, N)
    m = _Marcher(ctx, grid)

    def norm(v):
        return math.sqrt(float(np.sum(lam**alpha * v * v)))

    def fval(c):
        return f_coef(nl, basis, c) if nl is not None else np.zeros(N)

    c0 = np.asarray(u0.coefficients, float)
    tau = [0.0]
    U = [c0]
    g = [fval(c0) + bz_nodes[0]]
    Gtab = np.zeros((n + 1, N))  # midpoint forcing while on the table path
    on_table = True
    counts = [0] * (n + 1)
    halvings = 0
    out = np.full((n + 1, N), np.nan)
    out[0] = c0
    blow_node = blow_time = None

    def attempt(tn, j):
        i = len(tau)
        if on_table and tn == t[i]:
            Wd = m.table.W[i, i]
            hist = kernels.history_kernel(m.table.W, Gtab, i)
            s = m.s_nodes[i]
            bz = bz_nodes[i]
        else:
            tau_arr = np.array(tau + [tn])
            W = m.row(tau_arr)
            Wd = W[i]
            garr = np.asarray(g)
            Gm = 0.5 * (garr[1:] + garr[:-1])  # cells 1..i-1
            hist = np.einsum("kn,kn->n", W[1:i], Gm) if i > 1 else np.zeros(N)
            s = ctx.s_factors(tn)
            bz = np.array([np.interp(tn, t, bz_nodes[:, q]) for q in range(N)])
        base = s * c0 + hist + 0.5 * Wd * g[-1]
        half = 0.5 * Wd
        u = U[-1].copy()
        if nl is None:
            return "ok", base + half * bz, bz, 1
        d_prev = None
        for it in range(1, picard.max_iter + 1):
            try:
                u_new = base + half * (fval(u) + bz)
            except NonlinearityError:
                return "blowup", None, None, it
            nu = norm(u_new)
            if not math.isfinite(nu) or nu > picard.blowup_threshold:
                return "blowup", None, None, it
            d = norm(u_new - u)
            u = u_new
            if d <= picard.tol * max(1.0, nu):
                return "ok", u, bz, it
            if d_prev is not None and d > picard.contraction_limit * d_prev:
                return "halve", None, None, it
            d_prev = d
        return "halve", None, None, picard.max_iter

    status = "completed"
    for j in range(1, n + 1):
        target = t[j]
        h_try = target - tau[-1]
        while tau[-1] < target:
            remaining = target - tau[-1]
            h = min(h_try, remaining)
            tn = target if h >= remaining else tau[-1] + h
            res, u, bz, its = attempt(tn, j)
            counts[j] += its
            if res == "ok":
                tau.append(tn)
                U.append(u)
                g.append(fval(u) + bz)
                if on_table:
                    Gtab[len(tau) - 1] = 0.5 * (g[-1] + g[-2])
                h_try = 2 * h
                if tn != target:
                    continue
                if norm(u) > picard.blowup_threshold:
                    res = "blowup"
                else:
                    break
            if res == "blowup":
                status = "blowup"
                blow_node, blow_time = j, tn
                break
            # non-contraction: halve locally
            halvings += 1
            on_table = False
            h_try = 0.5 * h
            if h_try < remaining * 2.0 ** (-picard.max_halvings):
                raise SolverError(f"Picard iteration does not contract near t={tau[-1]:.6g} "
                                  f"even after {picard.max_halvings} step halvings")
        if status == "blowup":
            break
        out[j] = U[-1]

    fine_grid = TimeGrid(np.array(tau)) if len(tau) != n + 1 or not np.array_equal(tau, t) else grid
    traj = Trajectory(grid, basis, out, status, blow_node, blow_time, fine_grid, np.array(U))
    ok = np.all(np.isfinite(out), axis=1)
    norms = valpha_norms(out[ok], lam, alpha)
    rep = SolveReport(
        picard_counts=counts[1:],
        halvings=halvings,
        max_valpha=float(norms.max()),
        y_seminorm=ynorm_seminorm(traj, idx) if status == "completed" and n >= 2 else float("nan"),
        blowup=status == "blowup",
        blowup_node=blow_node,
        blowup_time=blow_time,
    )
    if halvings:
        log.info("forward solve halved %d step(s)", halvings)
    return traj, rep


def mild_residual(traj: Trajectory, idx: ProblemIndices, nl: Nonlinearity | None,
                  B: ControlOperator | None, z: ControlSignal | None,
                  ctl: SeriesControl | None = None) -> np.ndarray:
    """``|u_j - RHS_j(u)|_alpha`` of the discrete mild identity on the nodes actually used."""
    basis = traj.basis
    grid = traj.fine_grid or traj.grid
    U = traj.fine_states if traj.fine_states is not None else traj.states
    ctx = PropagatorContext(basis, idx.gamma, ctl) if ctl else PropagatorContext(basis, idx.gamma)
    bz = _control_forcing(B, z, traj.grid, basis.n_modes)
    if grid is not traj.grid:
        bz = np.column_stack([np.interp(grid.nodes, traj.grid.nodes, bz[:, q]) for q in range(bz.shape[1])])
    g = np.array([f_coef(nl, basis, c) if nl is not None else np.zeros(basis.n_modes) for c in U]) + bz
    W = kernel_table(ctx, grid).W
    conv = np.einsum("jkn,kn->jn", W, midpoint_forcing(g))
    S = np.vstack([ctx.s_factors(tt) for tt in grid.nodes])
    R = U - S * U[0] - conv
    return valpha_norms(R, basis.eigenvalues, idx.alpha)


# --------------------------------------------------------------------------
# linear Volterra marches (linearized and adjoint problems)
# --------------------------------------------------------------------------

def march_linear(W: np.ndarray, M: np.ndarray | None, b: np.ndarray) -> np.ndarray:
    """Solve ``x_j = sum_k W_jk (g_{k-1}+g_k)/2`` with ``g = M x + b`` and ``x_0 = 0``.

    ``M`` has shape ``(n_nodes, N, N)`` or is ``None``; each step is a direct
    ``N x N`` linear solve.
    """
    n1, N = b.shape
    x = np.zeros((n1, N))
    g = np.zeros((n1, N))
    G = np.zeros((n1, N))
    g[0] = b[0]
    eye = np.eye(N)
    for j in range(1, n1):
        half = 0.5 * W[j, j]
        hist = kernels.history_kernel(W, G, j)
        rhs = hist + half * (g[j - 1] + b[j])
        if M is None:
            x[j] = rhs
            g[j] = b[j]
        else:
            x[j] = np.linalg.solve(eye - half[:, None] * M[j], rhs)
            g[j] = M[j] @ x[j] + b[j]
        G[j] = 0.5 * (g[j] + g[j - 1])
    return x


# --------------------------------------------------------------------------
# diagnostics
# --------------------------------------------------------------------------

def ynorm_seminorm(traj: Trajectory, idx: ProblemIndices) -> float:
    """``max_j t_j^(1-theta) |du/dt(t_j)|_alpha`` over interior nodes (central differences)."""
    t = traj.grid.nodes
    U = traj.states
    if t.size < 3:
        raise ValueError("need at least three nodes")
    du = (U[2:] - U[:-2]) / (t[2:] - t[:-2])[:, None]
    vals = t[1:-1] ** (1 - idx.theta) * valpha_norms(du, traj.basis.eigenvalues, idx.alpha)
    return float(vals.max())


def energy_functional(traj: Trajectory, nl: Nonlinearity, B: ControlOperator | None,
                      z: ControlSignal | None, C_T: float = 0.0) -> np.ndarray:
    """``E(t) = C_T + |u|_1^2 - 2 (F(u), 1) - 2 (Bz, u)`` at every node."""
    basis = traj.basis
    U = traj.states
    lam = basis.eigenvalues
    u_phys = U @ basis.interior_values.T
    Fint = nl.F(u_phys) @ basis.grid.quad_weights
    bz = _control_forcing(B, z, traj.grid, basis.n_modes)
    return C_T + np.sum(lam * U * U, axis=1) - 2 * Fint - 2 * np.sum(bz * U, axis=1)
