"""Control operators, control signals, the admissible set and the tracking cost."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .fracops import GridMismatchError, TimeGrid
from .spectral import EigenBasis, SpectralField

CONTROL_KINDS = ("interior_identity", "boundary_injection")


@dataclass(frozen=True, eq=False)
class ControlOperator:
    """``B`` mapping control samples on ``D`` to spectral coefficients.

    ``interior_identity``: ``D = Omega``, ``Bz = (z, 0)`` projected on the basis.
    ``boundary_injection``: ``D`` is the two endpoints, ``Bz = (0, z)``; needs
    a basis whose measure has boundary point masses.
    """

    kind: str
    basis: EigenBasis
    alpha_tilde: float = 0.0

    def __post_init__(self):
        if self.kind not in CONTROL_KINDS:
            raise ValueError(f"unknown control kind {self.kind!r}")
        if self.kind == "boundary_injection" and not self.basis.grid.has_boundary:
            raise ValueError("boundary_injection needs a basis with boundary measure (Wentzell)")

    @property
    def modes_on_D(self) -> np.ndarray:
        """``phi_n`` sampled at the control nodes, shape ``(m, N)``."""
        if self.kind == "interior_identity":
            return self.basis.interior_values
        return self.basis.trace_values

    @property
    def weights(self) -> np.ndarray:
        """Quadrature weights of ``L^2(D)``."""
        if self.kind == "interior_identity":
            return self.basis.grid.quad_weights
        return self.basis.grid.boundary_weights

    @property
    def n_control(self) -> int:
        return self.weights.size

    def matrix(self) -> np.ndarray:
        """``(N, m)`` matrix of ``B`` acting on control sample vectors."""
        return self.modes_on_D.T * self.weights[None, :]

    def apply_array(self, Z: np.ndarray) -> np.ndarray:
        Z = np.asarray(Z, dtype=float)
        if Z.shape[-1] != self.n_control:
            raise ValueError(f"control vectors must have {self.n_control} entries")
        return Z @ self.matrix().T

    def adjoint_array(self, C: np.ndarray) -> np.ndarray:
        """``B*`` with respect to ``L^2(D)`` and the spectral Euclidean pairing."""
        C = np.asarray(C, dtype=float)
        if C.shape[-1] != self.basis.n_modes:
            raise ValueError("coefficient vectors have the wrong length")
        return C @ self.modes_on_D.T

    def l2_inner(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        return np.sum(self.weights * a * b, axis=-1)


def apply_B(op: ControlOperator, z_sample) -> SpectralField:
    return SpectralField(op.apply_array(z_sample), op.basis)


def apply_B_star(op: ControlOperator, fld: SpectralField) -> np.ndarray:
    return op.adjoint_array(fld.coefficients)


@dataclass(frozen=True, eq=False)
class ControlSignal:
    grid: TimeGrid
    values: np.ndarray  # (n_nodes, m)

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim != 2 or v.shape[0] != self.grid.nodes.size:
            raise ValueError("control values must have shape (n_nodes, m)")
        if not np.all(np.isfinite(v)):
            raise ValueError("control values must be finite")
        object.__setattr__(self, "values", v)

    @classmethod
    def zeros(cls, grid: TimeGrid, m: int) -> "ControlSignal":
        return cls(grid, np.zeros((grid.nodes.size, m)))

    def with_values(self, values) -> "ControlSignal":
        return ControlSignal(self.grid, values)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t"] + [f"z_{i + 1}" for i in range(self.values.shape[1])])
        for t, row in zip(self.grid.nodes, self.values):
            w.writerow([f"{t:.17g}"] + [f"{x:.17g}" for x in row])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "ControlSignal":
        rows = list(csv.reader(io.StringIO(text)))
        data = np.array([[float(x) for x in r] for r in rows[1:]])
        return cls(TimeGrid(data[:, 0]), data[:, 1:])


@dataclass(frozen=True)
class AdmissibleSet:
    """Box ``z_a <= z <= z_b`` plus the derivative bound ``|dz/dt| <= M t^(rho-1)``."""

    z_a: float | np.ndarray = -np.inf
    z_b: float | np.ndarray = np.inf
    M: float = np.inf
    rho: float = 1.0
    mollify: bool = False

    def __post_init__(self):
        if not self.M > 0:
            raise ValueError("M must be positive")
        if not self.rho > 0.5:
            raise ValueError("the admissible set needs rho > 1/2")
        if self.rho > 1.0:
            raise ValueError("rho must lie in (1/2, 1]")
        if np.any(np.asarray(self.z_a) > np.asarray(self.z_b)):
            raise ValueError("z_a must not exceed z_b")


@dataclass(frozen=True)
class ProjectionReport:
    max_violation: float
    violating_cells: int
    mollified: bool

    @property
    def feasible(self) -> bool:
        return self.violating_cells == 0


def derivative_violations(z: ControlSignal, aset: AdmissibleSet, weights: np.ndarray) -> np.ndarray:
    """Per-cell excess of ``|z_j - z_{j-1}|_{L^2(D)}`` over ``(M/rho)(t_j^rho - t_{j-1}^rho)``."""
    if not np.isfinite(aset.M):
        return np.zeros(z.grid.n_steps)
    t = z.grid.nodes
    jump = np.sqrt(np.sum(weights * np.diff(z.values, axis=0) ** 2, axis=1))
    allowed = aset.M / aset.rho * np.diff(t**aset.rho)
    return np.maximum(jump - allowed, 0.0)


def _clamp(values, aset):
    return np.clip(values, aset.z_a, aset.z_b)


def _mollify(z: ControlSignal) -> np.ndarray:
    # causal moving average over [t/2, t]
    t = z.grid.nodes
    out = np.empty_like(z.values)
    for j, tj in enumerate(t):
        sel = (t >= 0.5 * tj) & (t <= tj)
        out[j] = z.values[sel].mean(axis=0)
    return out


def project_admissible(z: ControlSignal, aset: AdmissibleSet, weights: np.ndarray | None = None,
                       return_report: bool = False):
    """Pointwise clamp into ``[z_a, z_b]``; the derivative bound is checked afterwards.

    With ``aset.mollify`` set, violating signals are smoothed by a causal
    moving average and clamped again.  Remaining violations are reported, not
    raised.
    """
    w = np.ones(z.values.shape[1]) if weights is None else np.asarray(weights)
    out = z.with_values(_clamp(z.values, aset))
    viol = derivative_violations(out, aset, w)
    mollified = False
    if aset.mollify and np.any(viol > 0):
        out = out.with_values(_clamp(_mollify(out), aset))
        viol = derivative_violations(out, aset, w)
        mollified = True
    if return_report:
        return out, ProjectionReport(float(viol.max(initial=0.0)), int(np.count_nonzero(viol)), mollified)
    return out


def zrho_norm(z: ControlSignal, rho: float, weights: np.ndarray | None = None) -> float:
    """``max_t |z|_{L^2(D)} + max t^(1-rho) |dz/dt|_{L^2(D)}``, derivatives by finite differences.

    ``t^(1-rho) dz/dt`` is the derivative in ``s = t^rho/rho``, so each cell
    uses ``dz/ds``; this is exact for ``z = t^rho c``, including the first cell.
    """
    w = np.ones(z.values.shape[1]) if weights is None else np.asarray(weights)
    t = z.grid.nodes
    if t.size < 3:
        raise ValueError("need at least three nodes")
    sup = np.sqrt(np.sum(w * z.values**2, axis=1)).max()
    ds = np.diff(t**rho) / rho
    der = (np.sqrt(np.sum(w * np.diff(z.values, axis=0) ** 2, axis=1)) / ds).max()
    return float(sup + der)


@dataclass(frozen=True, eq=False)
class CostSpec:
    """``J = a1/2 int |u - z_Q|^2 + a2/2 int |u - z_Sigma|^2_{bdry} + zeta/2 int |z|^2_D``.

    Targets are node samples, ``z_Q`` on the interior grid nodes and
    ``z_Sigma`` at the two endpoints; ``None`` means zero.
    """

    a1: float = 1.0
    a2: float = 0.0
    zeta: float = 0.0
    z_Q: np.ndarray | None = None
    z_Sigma: np.ndarray | None = None

    def __post_init__(self):
        if self.a1 < 0 or self.a2 < 0 or self.zeta < 0:
            raise ValueError("cost weights must be nonnegative")
        if not self.a1 + self.a2 > 0:
            raise ValueError("a1 and a2 must not both vanish")


def _targets(cs: CostSpec, n_nodes: int, basis: EigenBasis):
    zq = np.zeros((n_nodes, basis.grid.n_interior)) if cs.z_Q is None else np.asarray(cs.z_Q, float)
    zs = np.zeros((n_nodes, 2)) if cs.z_Sigma is None else np.asarray(cs.z_Sigma, float)
    if zq.shape != (n_nodes, basis.grid.n_interior) or zs.shape != (n_nodes, 2):
        raise GridMismatchError("cost targets do not match the time/space grids")
    return zq, zs


def tracking_terms(states: np.ndarray, basis: EigenBasis, cs: CostSpec):
    """Per-node tracking integrand and its coefficient gradient ``psi``."""
    zq, zs = _targets(cs, states.shape[0], basis)
    phi = basis.interior_values
    w = basis.grid.quad_weights
    r_int = states @ phi.T - zq
    r_bd = states @ basis.trace_values.T - zs
    dens = 0.5 * cs.a1 * np.sum(w * r_int**2, axis=1) + 0.5 * cs.a2 * np.sum(r_bd**2, axis=1)
    psi = cs.a1 * (w * r_int) @ phi + cs.a2 * r_bd @ basis.trace_values
    return dens, psi


def eval_cost(traj, z: ControlSignal, cs: CostSpec, op: ControlOperator) -> float:
    """Trapezoid-in-time value of ``J1 + J2``."""
    if not traj.grid.same_as(z.grid):
        raise GridMismatchError("state and control grids differ")
    omega = z.grid.trapezoid_weights()
    dens, _ = tracking_terms(traj.states, traj.basis, cs)
    j2 = 0.5 * cs.zeta * np.sum(op.weights * z.values**2, axis=1)
    return float(np.dot(omega, dens + j2))
