"""Hot numerical kernels, each in a numba and a pure-numpy flavour.

The ``*_jit`` functions are compiled with numba when it is available; the
``*_np`` functions are vectorized numpy and serve as the fallback path (and as
a cross-check in the test-suite).  The public names without suffix dispatch on
:data:`subdiff._accel.USING_NUMBA`.
"""
from __future__ import annotations

import math

import numpy as np

from ._accel import USING_NUMBA, njit, prange

# Hyperbolic Bromwich contour (Weideman & Trefethen 2007 parameters), t = 1.
CONTOUR_POINTS = 24
# Beyond this magnitude of a negative argument the asymptotic expansion is used.
ASYMPTOTIC_CUTOFF = 1.0e4
ASYMPTOTIC_TERMS = 10


def contour_nodes(n: int = CONTOUR_POINTS) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and folded weights of the half contour ``u >= 0``.

    ``E(-s) = Re sum_k w_k exp(z_k) z_k^(a-b) / (z_k^a + s)``.
    """
    h = 1.0818 / n
    mu = 4.4920 * n
    sig = 1.1721
    u = np.arange(n + 1) * h
    z = mu * (1.0 + np.sin(1j * u - sig))
    dz = mu * 1j * np.cos(1j * u - sig)
    w = h * dz / (2j * np.pi)
    w[1:] *= 2.0
    return z, w


# --------------------------------------------------------------------------
# Mittag-Leffler E_{a,b}(x), real x <= x_max
# --------------------------------------------------------------------------

@njit
def _ml_jit(x, coef, n_neg, s_star, n_pos, num, za, asym):
    out = np.empty(x.size)
    status = np.zeros(x.size, dtype=np.int64)
    for i in range(x.size):
        xi = x[i]
        if xi >= 0.0:
            acc = coef[n_pos - 1]
            for k in range(n_pos - 2, -1, -1):
                acc = acc * xi + coef[k]
            out[i] = acc
            continue
        s = -xi
        if s <= s_star:
            acc = coef[n_neg - 1]
            for k in range(n_neg - 2, -1, -1):
                acc = acc * xi + coef[k]
            out[i] = acc
        elif s >= ASYMPTOTIC_CUTOFF:
            inv = 1.0 / s
            p = inv
            acc = 0.0
            for k in range(asym.size):
                acc += asym[k] * p
                p = -p * inv
            out[i] = acc
        else:
            acc = 0.0
            for k in range(num.size):
                acc += (num[k] / (za[k] + s)).real
            out[i] = acc
        if not math.isfinite(out[i]):
            status[i] = 1
    return out, status


def _ml_np(x, coef, n_neg, s_star, n_pos, num, za, asym):
    out = np.empty(x.size)
    status = np.zeros(x.size, dtype=np.int64)
    pos = x >= 0.0
    s = -x
    ser = (~pos) & (s <= s_star)
    big = (~pos) & (s >= ASYMPTOTIC_CUTOFF)
    mid = ~(pos | ser | big)
    for mask, nt in ((pos, n_pos), (ser, n_neg)):
        if mask.any():
            xv = x[mask]
            acc = np.full(xv.shape, coef[nt - 1])
            for k in range(nt - 2, -1, -1):
                acc = acc * xv + coef[k]
            out[mask] = acc
    if big.any():
        inv = 1.0 / s[big]
        k = np.arange(asym.size)
        out[big] = (asym[None, :] * (-1.0) ** k * inv[:, None] ** (k + 1)).sum(axis=1)
    if mid.any():
        sm = s[mid]
        out[mid] = (num[None, :] / (za[None, :] + sm[:, None])).real.sum(axis=1)
    status[~np.isfinite(out)] = 1
    return out, status


@njit(parallel=True)
def _caputo_l1_jit(t, u, gamma, inv_gamma2):
    n = t.size
    out = np.zeros(n)
    e = 1.0 - gamma
    for j in prange(1, n):
        tj = t[j]
        acc = 0.0
        pe = (tj - t[0]) ** e  # (t_j - t_{k-1})^e carried over from the previous cell
        for k in range(1, j + 1):
            qe = (tj - t[k]) ** e
            acc += (u[k] - u[k - 1]) / (t[k] - t[k - 1]) * (pe - qe)
            pe = qe
        out[j] = acc * inv_gamma2
    return out


def _caputo_l1_np(t, u, gamma, inv_gamma2):
    n = t.size
    out = np.zeros(n)
    e = 1.0 - gamma
    slope = np.diff(u) / np.diff(t)
    for j in range(1, n):
        tj = t[j]
        w = (tj - t[:j]) ** e - (tj - t[1:j + 1]) ** e
        out[j] = np.dot(slope[:j], w) * inv_gamma2
    return out


@njit(parallel=True)
def _rl_left_jit(t, u, order, inv_gamma):
    # exact product integration of piecewise-linear u against (t-s)^(order-1)
    n = t.size
    out = np.zeros(n)
    a = order
    for j in prange(1, n):
        tj = t[j]
        acc = 0.0
        pa = (tj - t[0]) ** a
        for k in range(1, j + 1):
            p = tj - t[k - 1]
            q = tj - t[k]
            d = t[k] - t[k - 1]
            qa = q ** a
            m0 = (pa - qa) / a
            m1 = (p * pa - q * qa) / (a + 1.0)
            pa = qa
            # weights of u[k-1] and u[k]
            w_prev = (m1 - q * m0) / d
            w_next = (p * m0 - m1) / d
            acc += w_prev * u[k - 1] + w_next * u[k]
        out[j] = acc * inv_gamma
    return out


def _rl_left_np(t, u, order, inv_gamma):
    n = t.size
    out = np.zeros(n)
    a = order
    d = np.diff(t)
    for j in range(1, n):
        tj = t[j]
        p = tj - t[:j]
        q = tj - t[1:j + 1]
        m0 = (p ** a - q ** a) / a
        m1 = (p ** (a + 1.0) - q ** (a + 1.0)) / (a + 1.0)
        w_prev = (m1 - q * m0) / d[:j]
        w_next = (p * m0 - m1) / d[:j]
        out[j] = (np.dot(w_prev, u[:j]) + np.dot(w_next, u[1:j + 1])) * inv_gamma
    return out


@njit
def _history_jit(W, G, j):
    # sum_{k=1}^{j-1} W[j, k, :] * G[k, :]
    nm = G.shape[1]
    out = np.zeros(nm)
    for k in range(1, j):
        for m in range(nm):
            out[m] += W[j, k, m] * G[k, m]
    return out


def _history_np(W, G, j):
    if j <= 1:
        return np.zeros(G.shape[1])
    return np.einsum("km,km->m", W[j, 1:j], G[1:j])


if USING_NUMBA:
    ml_kernel = _ml_jit
    caputo_l1_kernel = _caputo_l1_jit
    rl_left_kernel = _rl_left_jit
    history_kernel = _history_jit
else:
    ml_kernel = _ml_np
    caputo_l1_kernel = _caputo_l1_np
    rl_left_kernel = _rl_left_np
    history_kernel = _history_np
