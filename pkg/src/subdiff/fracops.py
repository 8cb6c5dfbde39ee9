"""Discrete fractional calculus on (graded) time grids.

All operators treat samples as the piecewise-linear interpolant on the grid
and integrate it exactly against the fractional kernels.  Right-sided
operators are obtained by reversing time and reusing the left-sided code.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special

from . import kernels


class GridMismatchError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class TimeGrid:
    """Increasing nodes ``0 = t_0 < ... < t_n = T``."""

    nodes: np.ndarray

    def __post_init__(self):
        t = np.array(self.nodes, dtype=float)
        if t.ndim != 1 or t.size < 2:
            raise ValueError("a time grid needs at least two nodes")
        if t[0] != 0.0 or np.any(np.diff(t) <= 0):
            raise ValueError("time nodes must start at 0 and increase strictly")
        t.setflags(write=False)
        object.__setattr__(self, "nodes", t)

    @property
    def T(self) -> float:
        return float(self.nodes[-1])

    @property
    def n_steps(self) -> int:
        return self.nodes.size - 1

    @property
    def steps(self) -> np.ndarray:
        return np.diff(self.nodes)

    @property
    def key(self) -> bytes:
        return self.nodes.tobytes()

    def same_as(self, other: "TimeGrid") -> bool:
        return self is other or np.array_equal(self.nodes, other.nodes)

    def reversed(self) -> "TimeGrid":
        """Grid of ``s = T - t``, listed in increasing ``s``."""
        return TimeGrid(self.T - self.nodes[::-1])

    def trapezoid_weights(self) -> np.ndarray:
        d = self.steps
        w = np.zeros(self.nodes.size)
        w[:-1] += 0.5 * d
        w[1:] += 0.5 * d
        return w

    def refined(self) -> "TimeGrid":
        return TimeGrid(np.sort(np.concatenate([self.nodes, 0.5 * (self.nodes[1:] + self.nodes[:-1])])))


class GradedTimeGrid(TimeGrid):
    """``t_j = T (j/n)^r``; ``r = 1`` gives a uniform grid."""

    def __init__(self, T: float, n_steps: int, grading: float = 2.0):
        if not T > 0:
            raise ValueError("horizon T must be positive")
        if int(n_steps) < 1:
            raise ValueError("n_steps must be positive")
        if grading < 1:
            raise ValueError("grading must be >= 1")
        nodes = T * (np.arange(n_steps + 1) / n_steps) ** grading
        nodes[-1] = T
        super().__init__(nodes)
        object.__setattr__(self, "grading", float(grading))

    def refined(self) -> "GradedTimeGrid":
        return GradedTimeGrid(self.T, 2 * self.n_steps, self.grading)

    def __repr__(self):
        return f"GradedTimeGrid(T={self.T}, n_steps={self.n_steps}, grading={self.grading})"


@dataclass(frozen=True, eq=False)
class ScalarTrajectory:
    """One value per grid node.

    Values may be infinite where an operator is genuinely singular (the
    right-sided derivative at ``t = T``); NaN is rejected.
    """

    grid: TimeGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != self.grid.nodes.shape:
            raise ValueError("trajectory length must equal the number of grid nodes")
        if np.any(np.isnan(v)):
            raise ValueError("trajectory values must not be NaN")
        object.__setattr__(self, "values", v)

    def reversed(self) -> "ScalarTrajectory":
        return ScalarTrajectory(self.grid.reversed(), self.values[::-1])


# --------------------------------------------------------------------------
# array-level operators (columns = independent series)
# --------------------------------------------------------------------------

def _columnwise(fn, t, u, *args):
    u = np.asarray(u, dtype=float)
    if u.ndim == 1:
        return fn(t, np.ascontiguousarray(u), *args)
    out = np.empty_like(u)
    for m in range(u.shape[1]):
        out[:, m] = fn(t, np.ascontiguousarray(u[:, m]), *args)
    return out


def caputo_l1_array(t: np.ndarray, u: np.ndarray, gamma: float) -> np.ndarray:
    """L1 Caputo derivative at every node (zero at ``t_0``)."""
    return _columnwise(kernels.caputo_l1_kernel, np.asarray(t, float), u, float(gamma),
                       float(special.rgamma(2.0 - gamma)))


def rl_left_array(t: np.ndarray, u: np.ndarray, order: float) -> np.ndarray:
    return _columnwise(kernels.rl_left_kernel, np.asarray(t, float), u, float(order),
                       float(special.rgamma(order)))


def _boundary_kernel(t: np.ndarray, gamma: float) -> np.ndarray:
    # t^(-gamma)/Gamma(1-gamma), +inf at t = 0
    with np.errstate(divide="ignore"):
        return np.where(t > 0, t ** (-gamma), np.inf) * special.rgamma(1.0 - gamma)


def left_rl_derivative_array(t: np.ndarray, u: np.ndarray, gamma: float) -> np.ndarray:
    """``d/dt I^(1-gamma) u = Caputo(u) + u(0) t^(-gamma)/Gamma(1-gamma)``."""
    u = np.asarray(u, dtype=float)
    out = caputo_l1_array(t, u, gamma)
    k = _boundary_kernel(np.asarray(t, float), gamma)
    u0 = u[0]
    with np.errstate(invalid="ignore"):
        extra = np.multiply.outer(k, u0) if u.ndim > 1 else k * u0
    extra = np.where(np.broadcast_to(u0, extra.shape) == 0, 0.0, extra)
    return out + extra


# --------------------------------------------------------------------------
# public trajectory operators
# --------------------------------------------------------------------------

def caputo_l1(traj: ScalarTrajectory, gamma: float) -> ScalarTrajectory:
    """L1 approximation of the Caputo derivative, exact for piecewise-linear data."""
    if not 0.0 < gamma < 1.0:
        raise ValueError("gamma must lie in (0, 1)")
    return ScalarTrajectory(traj.grid, caputo_l1_array(traj.grid.nodes, traj.values, gamma))


def rl_integral(traj: ScalarTrajectory, order: float, direction: str = "left") -> ScalarTrajectory:
    """Riemann-Liouville integral ``I_{0,t}`` (left) or ``I_{t,T}`` (right) of the interpolant."""
    if not 0.0 < order < 1.0:
        raise ValueError("order must lie in (0, 1)")
    if direction == "left":
        return ScalarTrajectory(traj.grid, rl_left_array(traj.grid.nodes, traj.values, order))
    if direction == "right":
        rev = traj.reversed()
        vals = rl_left_array(rev.grid.nodes, rev.values, order)
        return ScalarTrajectory(traj.grid, vals[::-1])
    raise ValueError("direction must be 'left' or 'right'")


def left_rl_derivative(traj: ScalarTrajectory, gamma: float) -> ScalarTrajectory:
    if not 0.0 < gamma < 1.0:
        raise ValueError("gamma must lie in (0, 1)")
    return ScalarTrajectory(traj.grid, left_rl_derivative_array(traj.grid.nodes, traj.values, gamma))


def right_rl_derivative(traj: ScalarTrajectory, gamma: float) -> ScalarTrajectory:
    """``-d/dt I_{t,T}^(1-gamma) u``, via the left derivative of the reversed samples."""
    rev = left_rl_derivative(traj.reversed(), gamma)
    return ScalarTrajectory(traj.grid, rev.values[::-1])


def ibp_residual(u: ScalarTrajectory, v: ScalarTrajectory, gamma: float) -> float:
    """Defect of the fractional integration-by-parts identity

    ``int v C-D^g u = int u D_{t,T}^g v + [I_{t,T}^{1-g} v * u]_0^T``.

    The singular part ``v(T) (T-t)^(-g)/Gamma(1-g)`` of the right derivative
    is integrated exactly against ``u``.
    """
    if not u.grid.same_as(v.grid):
        raise GridMismatchError("u and v must share a time grid")
    grid = u.grid
    w = grid.trapezoid_weights()
    lhs = np.dot(w, v.values * caputo_l1(u, gamma).values)
    # regular part of the right derivative = Caputo of reversed samples
    vr = v.reversed()
    reg = caputo_l1_array(vr.grid.nodes, vr.values, gamma)[::-1]
    rhs = np.dot(w, reg * u.values)
    if v.values[-1] != 0.0:
        rhs += v.values[-1] * rl_left_array(grid.nodes, u.values, 1.0 - gamma)[-1]
    ir = rl_integral(v, 1.0 - gamma, "right").values
    bracket = ir[-1] * u.values[-1] - ir[0] * u.values[0]
    return float(abs(lhs - rhs - bracket))


def coercivity_matrix(grid: TimeGrid, gamma: float) -> np.ndarray:
    """``Q_jk = int_{I_j} int_{I_k, s<t} (t-s)^(-g)/Gamma(1-g) ds dt`` over grid cells.

    For piecewise-linear ``u`` with cell slopes ``d``,
    ``int_0^T (C-D^g u) u' dt = d^T Q d``.
    """
    t = grid.nodes
    a, b = t[:-1], t[1:]

    def G2(x):
        return np.where(x > 0, np.abs(x) ** (2.0 - gamma), 0.0) * special.rgamma(3.0 - gamma)

    # cells j (rows, t-variable) and k (columns, s-variable)
    Q = (G2(b[:, None] - a[None, :]) - G2(b[:, None] - b[None, :])
         - G2(a[:, None] - a[None, :]) + G2(a[:, None] - b[None, :]))
    return Q


def coercivity_value(coefs: np.ndarray, grid: TimeGrid, gamma: float) -> float:
    """``int_0^T (C-D^g u, u') dt`` summed over modes, for a coefficient history.

    ``coefs`` has shape ``(n_nodes, N)`` (or ``(n_nodes,)``).  The cell
    integral is exact for the piecewise-linear interpolant, which keeps the
    value a positive semidefinite quadratic form of the slopes.
    """
    c = np.asarray(coefs, dtype=float)
    if c.shape[0] != grid.nodes.size or c.shape[0] < 3:
        raise ValueError("coefficient history must match the grid and have >= 3 nodes")
    if c.ndim == 1:
        c = c[:, None]
    d = np.diff(c, axis=0) / grid.steps[:, None]
    Q = coercivity_matrix(grid, gamma)
    return float(np.einsum("jm,jk,km->", d, Q, d))
