"""Scalar special functions: Gamma, the Riemann-Liouville kernel, Mittag-Leffler
and Wright (Mainardi) functions.

Mittag-Leffler evaluation for real arguments uses three regimes:

* the Taylor series where its largest term stays small enough that
  cancellation cannot cost more than ``SeriesControl.abs_tol``;
* a Bromwich integral on a hyperbolic contour for the Laplace transform
  ``s^(a-b) / (s^a + x)`` in the intermediate range;
* the algebraic asymptotic expansion for very negative arguments.
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from . import kernels

X_MAX = 2.0
WRIGHT_T_MAX = 200.0
_WRIGHT_SERIES_T = 1.0
_EPS = np.finfo(float).eps


class DomainError(ValueError):
    """Argument outside the supported domain of a special function."""


class MittagLefflerError(ArithmeticError):
    """Mittag-Leffler evaluation failed; ``diagnostics`` holds partial results."""

    def __init__(self, msg: str, diagnostics: dict):
        super().__init__(msg)
        self.diagnostics = diagnostics


@dataclass(frozen=True)
class SeriesControl:
    abs_tol: float = 1e-12
    max_terms: int = 400

    def __post_init__(self):
        if not self.abs_tol > 0:
            raise ValueError("abs_tol must be positive")
        if int(self.max_terms) < 8:
            raise ValueError("max_terms must be >= 8")


DEFAULT_CONTROL = SeriesControl()


def gamma_fn(x: float) -> float:
    """Gamma function; raises :class:`DomainError` at the poles 0, -1, -2, ..."""
    x = float(x)
    if x <= 0 and x == math.floor(x):
        raise DomainError(f"Gamma has a pole at x={x}")
    return float(special.gamma(x))


def kernel_g(gamma: float, t):
    """Riemann-Liouville kernel ``t^(gamma-1)/Gamma(gamma)`` for t > 0, zero otherwise."""
    if not 0.0 < gamma <= 1.0:
        raise ValueError("gamma must lie in (0, 1]")
    t_arr = np.asarray(t, dtype=float)
    pos = t_arr > 0
    out = np.zeros_like(t_arr)
    out[pos] = t_arr[pos] ** (gamma - 1.0) * special.rgamma(gamma)
    return float(out) if out.ndim == 0 else out


# --------------------------------------------------------------------------
# Mittag-Leffler
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class _MLPlan:
    coef: np.ndarray
    n_neg: int
    s_star: float
    n_pos: int
    x_pos_limit: float
    num: np.ndarray
    za: np.ndarray
    asym: np.ndarray


def _terms_needed(logc: np.ndarray, logs: float, log_tail: float) -> int | None:
    """Number of leading terms after which every term is below ``exp(log_tail)``."""
    k = np.arange(logc.size)
    lt = logc + k * logs
    above = np.nonzero(lt > log_tail)[0]
    if above.size == 0:
        return 1
    last = above[-1]
    if last >= logc.size - 2:
        return None
    return int(last + 2)


@functools.lru_cache(maxsize=256)
def _ml_plan(alpha: float, beta: float, abs_tol: float, max_terms: int) -> _MLPlan:
    k = np.arange(max_terms)
    coef = special.rgamma(alpha * k + beta)
    with np.errstate(divide="ignore"):
        logc = np.log(np.abs(coef))
    log_tail = math.log(abs_tol * 1e-4)
    log_cap = math.log(max(10.0, 0.1 * abs_tol / _EPS))

    def ok(s):
        lt = logc + k * math.log(s)
        if lt.max() > log_cap:
            return None
        return _terms_needed(logc, math.log(s), log_tail)

    lo, hi = 1e-3, 64.0
    if ok(lo) is None:
        raise MittagLefflerError("series unusable even near zero", {"alpha": alpha, "beta": beta})
    if ok(hi) is not None:
        lo = hi
    else:
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            if ok(mid) is None:
                hi = mid
            else:
                lo = mid
    s_star = lo
    n_neg = ok(s_star)

    # positive side: no cancellation, only convergence within max_terms
    x_pos = X_MAX
    n_pos = _terms_needed(logc, math.log(x_pos), log_tail)
    while n_pos is None and x_pos > 1e-3:
        x_pos *= 0.5
        n_pos = _terms_needed(logc, math.log(x_pos), log_tail)

    z, w = kernels.contour_nodes()
    num = w * np.exp(z) * z ** (alpha - beta)
    za = z ** alpha
    kk = np.arange(1, kernels.ASYMPTOTIC_TERMS + 1)
    asym = special.rgamma(beta - alpha * kk)
    return _MLPlan(coef, int(n_neg), float(s_star), int(n_pos or 1), float(x_pos),
                   num.astype(complex), za.astype(complex), asym.astype(float))


def ml_eval(alpha: float, beta: float, x, ctl: SeriesControl | None = None):
    """Two-parameter Mittag-Leffler function ``E_{alpha,beta}(x)`` for real ``x <= 2``.

    Accepts scalars or arrays; returns the same shape.
    """
    ctl = ctl or DEFAULT_CONTROL
    if not 0.0 < alpha <= 1.0:
        raise ValueError("alpha must lie in (0, 1]")
    if not beta > 0.0:
        raise ValueError("beta must be positive")
    xa = np.asarray(x, dtype=float)
    flat = np.ascontiguousarray(xa.ravel())
    if flat.size and np.nanmax(flat) > X_MAX:
        raise DomainError(f"positive arguments are capped at x_max={X_MAX}")
    plan = _ml_plan(float(alpha), float(beta), float(ctl.abs_tol), int(ctl.max_terms))
    far = flat > plan.x_pos_limit
    if far.any():
        flat = flat.copy()
        far_vals = flat[far]
        flat[far] = 0.0
    out, status = kernels.ml_kernel(flat, plan.coef, plan.n_neg, plan.s_star, plan.n_pos,
                                    plan.num, plan.za, plan.asym)
    if status.any():
        bad = np.nonzero(status)[0]
        raise MittagLefflerError(
            f"E_{{{alpha},{beta}}} evaluation failed at {bad.size} point(s)",
            {"x": flat[bad][:10].tolist(), "partial": out[bad][:10].tolist(),
             "series_cutoff": plan.s_star},
        )
    if far.any():
        out[far] = _ml_positive_logsum(alpha, beta, far_vals, ctl.abs_tol)
    out = out.reshape(xa.shape)
    return float(out) if out.ndim == 0 else out


def _ml_positive_logsum(alpha, beta, x, abs_tol):
    # all terms positive, so summation in log space loses nothing to cancellation
    res = np.empty_like(x)
    for i, xi in enumerate(x):
        n = 64
        while True:
            k = np.arange(n)
            lt = k * math.log(xi) - special.gammaln(alpha * k + beta)
            if lt[-1] < lt.max() + math.log(abs_tol * 1e-4) and lt[-1] < lt[-2]:
                break
            n *= 2
            if n > 1 << 22:
                raise MittagLefflerError("positive-argument series did not converge",
                                         {"x": float(xi), "terms": n})
        m = lt.max()
        sign = np.sign(special.gamma(alpha * k + beta))
        res[i] = math.exp(m) * float(np.sum(sign * np.exp(lt - m)))
    return res


# --------------------------------------------------------------------------
# Wright / Mainardi function
# --------------------------------------------------------------------------

_GL_X, _GL_W = np.polynomial.legendre.leggauss(200)
_PHI = (_GL_X + 1.0) * (np.pi / 2)
_PHI_W = _GL_W * (np.pi / 2)


def _wright_series(gamma: float, t: np.ndarray, max_terms: int) -> np.ndarray:
    # 1/Gamma(1-g-gk) = Gamma(g(k+1)) sin(pi g(k+1)) / pi
    k = np.arange(max_terms)
    a = gamma * (k + 1)
    logmag = special.gammaln(a) - special.gammaln(k + 1)
    sgn = (-1.0) ** k * np.sin(np.pi * a) / np.pi
    out = np.empty_like(t)
    for i, ti in enumerate(t):
        if ti == 0.0:
            out[i] = special.rgamma(1.0 - gamma)
            continue
        out[i] = np.sum(sgn * np.exp(logmag + k * math.log(ti)))
    return out


def _wright_kanter(gamma: float, t: np.ndarray) -> np.ndarray:
    g = gamma
    sphi = np.sin(_PHI)
    A = (np.sin(g * _PHI) ** g * np.sin((1 - g) * _PHI) ** (1 - g) / sphi) ** (1.0 / (1 - g))
    tau = t ** (1.0 / (1 - g))
    integ = (_PHI_W * A)[None, :] * np.exp(-A[None, :] * tau[:, None])
    return t ** (g / (1 - g)) / (np.pi * (1 - g)) * integ.sum(axis=1)


def wright_eval(gamma: float, t, ctl: SeriesControl | None = None):
    """Wright (Mainardi) function ``Phi_gamma(t)`` on the window ``0 <= t <= WRIGHT_T_MAX``.

    Small ``t`` uses the defining power series; larger ``t`` uses Kanter's
    positive integral representation, which is free of cancellation.
    """
    ctl = ctl or DEFAULT_CONTROL
    if not 0.0 < gamma < 1.0:
        raise ValueError("gamma must lie in (0, 1)")
    ta = np.asarray(t, dtype=float)
    flat = ta.ravel()
    if flat.size and (np.any(flat < 0) or np.any(flat > WRIGHT_T_MAX) or not np.all(np.isfinite(flat))):
        raise DomainError(f"Wright function evaluated outside its window [0, {WRIGHT_T_MAX}]")
    out = np.empty_like(flat)
    small = flat <= _WRIGHT_SERIES_T
    if small.any():
        out[small] = _wright_series(gamma, flat[small], max(ctl.max_terms, 8))
    if (~small).any():
        out[~small] = _wright_kanter(gamma, flat[~small])
    out = out.reshape(ta.shape)
    return float(out) if out.ndim == 0 else out


def wright_moment(gamma: float, p: float) -> float:
    """Adaptive quadrature of ``int_0^inf t^p Phi_gamma(t) dt`` (window-truncated)."""
    from scipy.integrate import quad

    f = lambda s: s ** p * wright_eval(gamma, s)
    pieces = [0.0, 1.0, 4.0, 16.0, 64.0, WRIGHT_T_MAX]
    return sum(quad(f, a, b, limit=200, epsabs=1e-13, epsrel=1e-12)[0]
               for a, b in zip(pieces[:-1], pieces[1:]))
