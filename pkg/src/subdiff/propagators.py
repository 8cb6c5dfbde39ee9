"""Mittag-Leffler resolvent families and the singular Volterra convolution.

``S(t) v = sum E_{g,1}(-lam_n t^g) c_n phi_n`` and
``P(t) v = sum t^(g-1) E_{g,g}(-lam_n t^g) c_n phi_n``.  The convolution with
``P`` uses exact kernel masses ``K_n(s) = s^g E_{g,g+1}(-lam_n s^g)``, the
antiderivative of ``s^(g-1) E_{g,g}(-lam_n s^g)``.
"""
from __future__ import annotations

import threading
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .fracops import TimeGrid
from .specfun import DEFAULT_CONTROL, DomainError, SeriesControl, ml_eval
from .spectral import EigenBasis, SpectralField


@dataclass(frozen=True, eq=False)
class PropagatorContext:
    """Resolvent data for one basis and one order ``gamma``.

    ``gamma = 1`` is accepted so the classical semigroup limit can be run
    through the same code.
    """

    basis: EigenBasis
    gamma: float
    ctl: SeriesControl = field(default_factory=lambda: DEFAULT_CONTROL)

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must lie in (0, 1]")

    @property
    def eigenvalues(self) -> np.ndarray:
        return self.basis.eigenvalues

    def s_factors(self, t: float, eigenvalues: np.ndarray | None = None) -> np.ndarray:
        lam = self.eigenvalues if eigenvalues is None else eigenvalues
        if t < 0:
            raise DomainError("S(t) needs t >= 0")
        if t == 0:
            return np.ones_like(lam)
        return ml_eval(self.gamma, 1.0, -lam * t**self.gamma, self.ctl)

    def p_factors(self, t: float, eigenvalues: np.ndarray | None = None) -> np.ndarray:
        lam = self.eigenvalues if eigenvalues is None else eigenvalues
        if not t > 0:
            raise DomainError("P(t) is singular at t = 0; need t > 0")
        g = self.gamma
        return t ** (g - 1.0) * ml_eval(g, g, -lam * t**g, self.ctl)

    def kernel_mass(self, s: np.ndarray, eigenvalues: np.ndarray | None = None) -> np.ndarray:
        """``K_n(s)`` for every lag in ``s`` (shape ``s.shape + (N,)``); zero for ``s <= 0``."""
        lam = self.eigenvalues if eigenvalues is None else eigenvalues
        g = self.gamma
        s = np.asarray(s, dtype=float)
        sg = np.where(s > 0, np.abs(s) ** g, 0.0)
        x = -np.multiply.outer(sg, lam)
        return sg[..., None] * ml_eval(g, g + 1.0, x, self.ctl)


def apply_S(ctx: PropagatorContext, t: float, v: SpectralField) -> SpectralField:
    if t == 0:
        return v
    return SpectralField(ctx.s_factors(t) * v.coefficients, v.basis)


def apply_P(ctx: PropagatorContext, t: float, v: SpectralField) -> SpectralField:
    return SpectralField(ctx.p_factors(t) * v.coefficients, v.basis)


# --------------------------------------------------------------------------
# product-integration weights
# --------------------------------------------------------------------------

class KernelTable:
    """``W[j, k, n] = K_n(t_j - t_{k-1}) - K_n(t_j - t_k)`` for ``1 <= k <= j``.

    Entries with ``k > j`` and ``k = 0`` are zero.  ``history(j, G)`` returns
    ``sum_{k<j} W[j, k] G[k]``.
    """

    def __init__(self, ctx: PropagatorContext, grid: TimeGrid, eigenvalues: np.ndarray | None = None):
        t = grid.nodes
        n = t.size
        lam = ctx.eigenvalues if eigenvalues is None else np.asarray(eigenvalues, float)
        lags = t[:, None] - t[None, :]
        K = ctx.kernel_mass(np.where(lags > 0, lags, 0.0), lam)  # (n, n, N)
        W = np.zeros_like(K)
        W[:, 1:] = K[:, :-1] - K[:, 1:]
        W[np.triu_indices(n, 1)] = 0.0
        W[:, 0] = 0.0
        self.grid = grid
        self.W = np.ascontiguousarray(W)

    def history(self, j: int, G: np.ndarray) -> np.ndarray:
        return kernels.history_kernel(self.W, G, j)


_CACHE: OrderedDict = OrderedDict()
_CACHE_LOCK = threading.Lock()
_CACHE_SIZE = 8


def kernel_table(ctx: PropagatorContext, grid: TimeGrid, eigenvalues: np.ndarray | None = None) -> KernelTable:
    """Memoized :class:`KernelTable`, keyed on the exact grid, order and spectrum."""
    lam = ctx.eigenvalues if eigenvalues is None else np.asarray(eigenvalues, float)
    key = (grid.key, ctx.gamma, lam.tobytes(), ctx.ctl)
    with _CACHE_LOCK:
        tab = _CACHE.get(key)
        if tab is not None:
            _CACHE.move_to_end(key)
            return tab
    tab = KernelTable(ctx, grid, lam)
    with _CACHE_LOCK:
        _CACHE[key] = tab
        while len(_CACHE) > _CACHE_SIZE:
            _CACHE.popitem(last=False)
    return tab


def clear_cache() -> None:
    with _CACHE_LOCK:
        _CACHE.clear()


def midpoint_forcing(g: np.ndarray) -> np.ndarray:
    """Cell averages ``(g_{k-1} + g_k)/2`` stored at index ``k`` (row 0 unused)."""
    G = np.zeros_like(g)
    G[1:] = 0.5 * (g[1:] + g[:-1])
    return G


def convolve_P_array(ctx: PropagatorContext, grid: TimeGrid, forcing: np.ndarray,
                     eigenvalues: np.ndarray | None = None) -> np.ndarray:
    """``int_0^{t_j} P(t_j - s) g(s) ds`` for coefficient histories ``(n_nodes, N)``."""
    g = np.asarray(forcing, dtype=float)
    if g.shape[0] != grid.nodes.size:
        raise ValueError("forcing must have one row per grid node")
    W = kernel_table(ctx, grid, eigenvalues).W
    G = midpoint_forcing(g)
    return np.einsum("jkn,kn->jn", W, G)


def convolve_P(ctx: PropagatorContext, grid: TimeGrid, forcing) -> list[SpectralField]:
    """Volterra convolution of per-node forcing fields with ``P``."""
    arr = np.array([f.coefficients for f in forcing])
    out = convolve_P_array(ctx, grid, arr)
    return [SpectralField(row, ctx.basis) for row in out]
