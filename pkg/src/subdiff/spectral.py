"""Eigenbases of the 1-D model operators, fractional-power norms and the
transforms between spectral coefficients and grid values.

Every mode is stored in the closed form ``phi(x) = a cos(kx) + b sin(kx)``, so
values and derivatives can be evaluated anywhere, not only on the grid.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

KINDS = ("dirichlet_laplacian_1d", "neumann_laplacian_1d", "fractional_neumann", "wentzell_robin_1d")


class BasisConstructionError(RuntimeError):
    pass


@dataclass(frozen=True)
class OperatorSpec:
    """Model operator ``A`` on ``(0, L)`` plus an explicit identity shift.

    ``robin`` holds the two boundary coefficients of the Wentzell-Robin form
    and ``delta`` its surface-diffusion switch (inert for intervals, whose
    boundary is two points).
    """

    kind: str
    domain_length: float = math.pi
    shift: float = 0.0
    s: float = 1.0
    robin: tuple[float, float] = (1.0, 1.0)
    delta: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown operator kind {self.kind!r}; expected one of {KINDS}")
        if not self.domain_length > 0:
            raise ValueError("domain_length must be positive")
        if self.shift < 0:
            raise ValueError("shift must be nonnegative")
        if self.kind in ("neumann_laplacian_1d", "fractional_neumann") and not self.shift > 0:
            raise ValueError(f"{self.kind} needs shift > 0 so that A is strictly positive")
        if self.kind == "fractional_neumann" and not 0.0 < self.s <= 1.0:
            raise ValueError("fractional power s must lie in (0, 1]")
        if self.kind == "wentzell_robin_1d":
            if len(self.robin) != 2 or min(self.robin) <= 0:
                raise ValueError("robin coefficients must be a pair of positive reals")
            if self.delta not in (0, 1):
                raise ValueError("delta must be 0 or 1")
        object.__setattr__(self, "robin", tuple(float(b) for b in self.robin))

    @property
    def has_boundary_measure(self) -> bool:
        return self.kind == "wentzell_robin_1d"

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "domain_length": self.domain_length, "shift": self.shift}
        if self.kind == "fractional_neumann":
            d["s"] = self.s
        if self.kind == "wentzell_robin_1d":
            d["robin"] = list(self.robin)
            d["delta"] = self.delta
        return d


@dataclass(frozen=True, eq=False)
class PhysicalGrid:
    """Quadrature for the measure ``mu = dx + sigma`` on ``[0, L]``.

    ``nodes``/``quad_weights`` carry the interior Lebesgue part;
    ``boundary_weights`` are the point masses at ``x = 0`` and ``x = L``.
    """

    length: float
    nodes: np.ndarray
    quad_weights: np.ndarray
    boundary_weights: np.ndarray = field(default_factory=lambda: np.zeros(2))

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        w = np.asarray(self.quad_weights, dtype=float)
        bw = np.asarray(self.boundary_weights, dtype=float)
        if nodes.ndim != 1 or nodes.shape != w.shape or bw.shape != (2,):
            raise ValueError("grid arrays have inconsistent shapes")
        if np.any(np.diff(nodes) <= 0) or nodes[0] < 0 or nodes[-1] > self.length:
            raise ValueError("grid nodes must be strictly increasing inside [0, L]")
        if np.any(w < 0) or np.any(bw < 0):
            raise ValueError("quadrature weights must be nonnegative")
        if abs(w.sum() - self.length) > 1e-10 * self.length:
            raise ValueError("interior weights must sum to L")
        for name, arr in (("nodes", nodes), ("quad_weights", w), ("boundary_weights", bw)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def uniform(cls, length: float, n_intervals: int) -> "PhysicalGrid":
        """Composite trapezoid rule on ``n_intervals + 1`` equispaced nodes."""
        x = np.linspace(0.0, length, n_intervals + 1)
        w = np.full(x.size, length / n_intervals)
        w[[0, -1]] *= 0.5
        return cls(length, x, w)

    @classmethod
    def gauss(cls, length: float, n_nodes: int, boundary_weight: float = 1.0) -> "PhysicalGrid":
        """Gauss-Legendre interior rule plus point masses at the two endpoints."""
        g, gw = np.polynomial.legendre.leggauss(n_nodes)
        return cls(length, 0.5 * length * (g + 1.0), 0.5 * length * gw,
                   np.full(2, float(boundary_weight)))

    @property
    def has_boundary(self) -> bool:
        return bool(np.any(self.boundary_weights > 0))

    @property
    def n_interior(self) -> int:
        return self.nodes.size

    @property
    def n_values(self) -> int:
        return self.nodes.size + (2 if self.has_boundary else 0)

    @property
    def weights(self) -> np.ndarray:
        """Weights of all value rows (interior, then the two boundary points if present)."""
        if self.has_boundary:
            return np.concatenate([self.quad_weights, self.boundary_weights])
        return self.quad_weights


def default_grid(spec: OperatorSpec, n_modes: int, n_space: int | None = None) -> PhysicalGrid:
    """Grid resolving ``n_modes`` modes, with room for quartic products."""
    L = spec.domain_length
    if spec.kind == "wentzell_robin_1d":
        return PhysicalGrid.gauss(L, n_space or (8 * n_modes + 32))
    return PhysicalGrid.uniform(L, n_space or max(4 * n_modes, 16))


@dataclass(frozen=True, eq=False)
class EigenBasis:
    spec: OperatorSpec
    eigenvalues: np.ndarray
    wavenumbers: np.ndarray
    cos_coef: np.ndarray
    sin_coef: np.ndarray
    grid: PhysicalGrid
    mode_values: np.ndarray  # (grid.n_values, N)
    trace_values: np.ndarray  # (2, N): phi_n(0), phi_n(L)

    @property
    def n_modes(self) -> int:
        return self.eigenvalues.size

    @property
    def weights(self) -> np.ndarray:
        return self.grid.weights

    @property
    def interior_values(self) -> np.ndarray:
        return self.mode_values[: self.grid.n_interior]

    def eval_modes(self, x) -> np.ndarray:
        """``phi_n(x)`` for arbitrary points, shape ``(len(x), N)``."""
        kx = np.outer(np.asarray(x, dtype=float), self.wavenumbers)
        return self.cos_coef * np.cos(kx) + self.sin_coef * np.sin(kx)

    def eval_mode_derivatives(self, x) -> np.ndarray:
        k = self.wavenumbers
        kx = np.outer(np.asarray(x, dtype=float), k)
        return k * (-self.cos_coef * np.sin(kx) + self.sin_coef * np.cos(kx))

    def to_json(self) -> str:
        doc = {**self.spec.to_dict(), "L": self.spec.domain_length,
               "eigenvalues": self.eigenvalues.tolist(), "grid_nodes": self.grid.nodes.tolist()}
        return json.dumps(doc, indent=2)


@dataclass(frozen=True, eq=False)
class SpectralField:
    coefficients: np.ndarray
    basis: EigenBasis

    def __post_init__(self):
        c = np.asarray(self.coefficients, dtype=float)
        if c.shape != (self.basis.n_modes,):
            raise ValueError(f"expected {self.basis.n_modes} coefficients, got shape {c.shape}")
        if not np.all(np.isfinite(c)):
            raise ValueError("spectral coefficients must be finite")
        object.__setattr__(self, "coefficients", c)


# --------------------------------------------------------------------------
# construction
# --------------------------------------------------------------------------

def _wentzell_secular(k, L, b0, bL):
    # G(k)/k; the trivial root k = 0 is removed by the division
    s, c = math.sin(k * L), math.cos(k * L)
    return (s / k) * ((bL - k * k) * (b0 - k * k) - k * k) + c * (b0 + bL - 2 * k * k)


def _wentzell_roots(spec: OperatorSpec, n_modes: int) -> np.ndarray:
    L = spec.domain_length
    b0, bL = spec.robin
    step = math.pi / (L * 256)
    roots: list[float] = []
    k_lo = 1e-9
    f_lo = _wentzell_secular(k_lo, L, b0, bL)
    k_cap = (n_modes + 8) * math.pi / L + 4 * math.sqrt(max(b0, bL)) + 1.0
    while len(roots) < n_modes:
        k_hi = k_lo + step
        if k_hi > k_cap:
            raise BasisConstructionError(
                f"secular equation: no bracket found for mode {len(roots) + 1} below k={k_cap:.3g}")
        f_hi = _wentzell_secular(k_hi, L, b0, bL)
        if f_hi == 0.0:
            roots.append(k_hi)
            k_hi += 1e-12
            f_hi = _wentzell_secular(k_hi, L, b0, bL)
        elif f_lo * f_hi < 0:
            try:
                roots.append(brentq(_wentzell_secular, k_lo, k_hi, args=(L, b0, bL),
                                    xtol=1e-14, rtol=4 * np.finfo(float).eps))
            except ValueError as exc:
                raise BasisConstructionError(
                    f"secular equation: root refinement failed for mode {len(roots) + 1}") from exc
        k_lo, f_lo = k_hi, f_hi
    return np.asarray(roots[:n_modes])


def _wentzell_norm2(a, b, k, L):
    s2, c2 = math.sin(2 * k * L), math.cos(2 * k * L)
    interior = (a * a * (L / 2 + s2 / (4 * k)) + b * b * (L / 2 - s2 / (4 * k))
                + a * b * (1 - c2) / (2 * k))
    end = a * math.cos(k * L) + b * math.sin(k * L)
    return interior + a * a + end * end


def build_basis(spec: OperatorSpec, n_modes: int, grid: PhysicalGrid | None = None) -> EigenBasis:
    """Eigenpairs of ``spec`` sorted by eigenvalue, sampled on ``grid``."""
    if n_modes < 1:
        raise ValueError("n_modes must be >= 1")
    L = spec.domain_length
    grid = grid or default_grid(spec, n_modes)
    if grid.length != L:
        raise ValueError("grid length does not match the operator domain")
    if grid.n_interior < 4 * n_modes:
        raise ValueError(f"grid has {grid.n_interior} nodes; at least {4 * n_modes} "
                         "(8 per wavelength) are needed for the highest mode")
    if spec.has_boundary_measure != grid.has_boundary:
        raise ValueError("Wentzell bases need boundary weights on the grid and other kinds must not have them")

    n = np.arange(n_modes, dtype=float)
    if spec.kind == "dirichlet_laplacian_1d":
        k = (n + 1) * math.pi / L
        a = np.zeros(n_modes)
        b = np.full(n_modes, math.sqrt(2 / L))
        lam = spec.shift + k**2
    elif spec.kind in ("neumann_laplacian_1d", "fractional_neumann"):
        k = n * math.pi / L
        a = np.full(n_modes, math.sqrt(2 / L))
        a[0] = math.sqrt(1 / L)
        b = np.zeros(n_modes)
        lam = spec.shift + k**2
        if spec.kind == "fractional_neumann":
            lam = lam**spec.s
    else:
        k = _wentzell_roots(spec, n_modes)
        b0 = spec.robin[0]
        a = k.copy()
        b = b0 - k**2
        norm = np.sqrt([_wentzell_norm2(ai, bi, ki, L) for ai, bi, ki in zip(a, b, k)])
        a, b = a / norm, b / norm
        lam = spec.shift + k**2

    kx = np.outer(grid.nodes, k)
    vals = a * np.cos(kx) + b * np.sin(kx)
    traces = np.vstack([a, a * np.cos(k * L) + b * np.sin(k * L)])
    if grid.has_boundary:
        vals = np.vstack([vals, traces])
    if np.any(np.diff(lam) < 0) or lam[0] <= 0:
        raise BasisConstructionError("eigenvalues are not positive and sorted")
    for arr in (lam, k, a, b, vals, traces):
        arr.setflags(write=False)
    return EigenBasis(spec, lam, k, a, b, grid, vals, traces)


# --------------------------------------------------------------------------
# norms and transforms
# --------------------------------------------------------------------------

def _coef(field_or_array):
    return field_or_array.coefficients if isinstance(field_or_array, SpectralField) else np.asarray(field_or_array)


def valpha_norm(fld: SpectralField, alpha: float, eigenvalues: np.ndarray | None = None) -> float:
    """``|u|_alpha = (sum lambda_n^alpha c_n^2)^(1/2)``."""
    if not -2.0 <= alpha <= 2.0:
        raise ValueError("alpha must lie in [-2, 2]")
    lam = fld.basis.eigenvalues if eigenvalues is None else eigenvalues
    c = _coef(fld)
    return float(math.sqrt(np.sum(lam**alpha * c * c)))


def valpha_norms(coefs: np.ndarray, eigenvalues: np.ndarray, alpha: float) -> np.ndarray:
    """Row-wise ``|.|_alpha`` of a stack of coefficient vectors."""
    return np.sqrt(np.sum(eigenvalues**alpha * np.asarray(coefs) ** 2, axis=-1))


def apply_A_power(fld: SpectralField, power: float) -> SpectralField:
    if abs(power) > 2.0:
        raise ValueError("|power| must not exceed 2")
    if power == 0:
        return fld
    return SpectralField(fld.basis.eigenvalues**power * fld.coefficients, fld.basis)


def synthesize(fld: SpectralField) -> np.ndarray:
    """Grid values ``sum c_n phi_n`` (boundary traces appended for Wentzell)."""
    return fld.basis.mode_values @ fld.coefficients


def analyze(values, basis: EigenBasis) -> SpectralField:
    """Quadrature projection ``c_n = (values, phi_n)_mu``."""
    v = np.asarray(values, dtype=float)
    if v.shape != (basis.grid.n_values,):
        raise ValueError(f"expected {basis.grid.n_values} grid values, got shape {v.shape}")
    return SpectralField(basis.mode_values.T @ (basis.weights * v), basis)


def tail_indicator(fld: SpectralField, alpha: float) -> float:
    """``lambda_N^(alpha/2) |c_N|``: size of the last retained mode in ``V_alpha``."""
    return float(fld.basis.eigenvalues[-1] ** (alpha / 2) * abs(fld.coefficients[-1]))


def gram_matrix(basis: EigenBasis) -> np.ndarray:
    return basis.mode_values.T @ (basis.weights[:, None] * basis.mode_values)


def wentzell_form(basis: EigenBasis, u_coef: np.ndarray, v_fn, v_der_fn,
                  n_quad: int = 400) -> tuple[float, float]:
    """Bilinear form ``int u'v' + beta_0 u(0)v(0) + beta_L u(L)v(L) + shift (u, v)_mu``.

    ``v_fn``/``v_der_fn`` are callables; the interior integral uses a
    Gauss-Legendre rule independent of the basis grid.  Returns the form value
    and the ``mu`` inner product ``(u, v)_mu``.
    """
    spec = basis.spec
    L = spec.domain_length
    g, gw = np.polynomial.legendre.leggauss(n_quad)
    x, w = 0.5 * L * (g + 1), 0.5 * L * gw
    du = basis.eval_mode_derivatives(x) @ u_coef
    u = basis.eval_modes(x) @ u_coef
    ub = basis.trace_values @ np.asarray(u_coef)
    vb = np.array([v_fn(np.array([0.0]))[0], v_fn(np.array([L]))[0]])
    b0, bL = spec.robin
    form = np.sum(w * du * v_der_fn(x)) + b0 * ub[0] * vb[0] + bL * ub[1] * vb[1]
    mass = np.sum(w * u * v_fn(x)) + ub[0] * vb[0] + ub[1] * vb[1]
    return float(form + spec.shift * mass), float(mass)
