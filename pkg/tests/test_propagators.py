from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate

from subdiff.fracops import GradedTimeGrid
from subdiff.propagators import (
    PropagatorContext, apply_P, apply_S, clear_cache, convolve_P, convolve_P_array, kernel_table,
)
from subdiff.specfun import WRIGHT_T_MAX, DomainError, ml_eval, wright_eval
from subdiff.spectral import OperatorSpec, SpectralField, build_basis

DIR1 = build_basis(OperatorSpec("dirichlet_laplacian_1d"), 1)
DIR4 = build_basis(OperatorSpec("dirichlet_laplacian_1d"), 4)


def test_S_at_zero_is_identity():
    v = SpectralField([1.0, -2.0, 0.5, 3.0], DIR4)
    assert apply_S(PropagatorContext(DIR4, 0.5), 0.0, v) is v
    np.testing.assert_array_equal(PropagatorContext(DIR4, 0.5).s_factors(0.0), np.ones(4))


def test_S_near_gamma_one_is_exponential():
    ctx = PropagatorContext(DIR4, 1 - 1e-9)
    for t in (0.1, 0.5, 1.0, 2.0):
        np.testing.assert_allclose(ctx.s_factors(t), np.exp(-DIR4.eigenvalues * t), atol=1e-6)


def test_S_example():
    assert PropagatorContext(DIR1, 0.5).s_factors(1.0)[0] == pytest.approx(0.4275835762, abs=1e-10)


def test_P_gamma_one_is_exponential():
    ctx = PropagatorContext(DIR4, 1.0)
    np.testing.assert_allclose(ctx.p_factors(0.7), np.exp(-0.7 * DIR4.eigenvalues), rtol=1e-13, atol=1e-12)


def test_P_zero_eigenvalue_is_power_kernel():
    ctx = PropagatorContext(DIR4, 0.4)
    for t in (0.2, 1.0, 3.0):
        assert ctx.p_factors(t, np.array([0.0]))[0] == pytest.approx(t**-0.6 / math.gamma(0.4), rel=1e-13)


def test_P_example():
    # t^(-1/2) E_{1/2,1/2}(-t^(1/2)) at t = 1 equals 1/sqrt(pi) - e erfc(1)
    v = apply_P(PropagatorContext(DIR1, 0.5), 1.0, SpectralField([1.0], DIR1))
    assert v.coefficients[0] == pytest.approx(0.1366060073919493, rel=1e-12)


def test_P_at_zero_raises():
    ctx = PropagatorContext(DIR1, 0.5)
    for t in (0.0, -1.0):
        with pytest.raises(DomainError):
            ctx.p_factors(t)
    with pytest.raises(DomainError):
        ctx.s_factors(-0.1)


def test_context_validation():
    for g in (0.0, 1.1):
        with pytest.raises(ValueError):
            PropagatorContext(DIR1, g)


def test_convolve_zero_forcing():
    g = GradedTimeGrid(1.0, 16, 2.0)
    out = convolve_P_array(PropagatorContext(DIR4, 0.6), g, np.zeros((17, 4)))
    assert np.all(out == 0.0)


def test_convolve_constant_forcing_is_kernel_mass():
    ctx = PropagatorContext(DIR4, 0.6)
    g = GradedTimeGrid(1.0, 32, 2.0)
    f = [SpectralField([0.0, 1.0, 0.0, 0.0], DIR4)] * 33
    out = np.array([v.coefficients for v in convolve_P(ctx, g, f)])
    K = ctx.kernel_mass(g.nodes)
    np.testing.assert_allclose(out[:, 1], K[:, 1], atol=1e-10)
    assert np.all(out[:, [0, 2, 3]] == 0.0)


def test_convolve_gamma_one():
    g = GradedTimeGrid(1.0, 256, 1.0)
    v = convolve_P_array(PropagatorContext(DIR1, 1.0), g, np.ones((257, 1)))
    assert np.max(np.abs(v[:, 0] - (1 - np.exp(-g.nodes)))) <= 2e-3


@pytest.mark.parametrize("gamma", [0.3, 0.7])
def test_kernel_mass_vs_quadrature(gamma):
    ctx = PropagatorContext(DIR4, gamma)
    for s in (0.05, 0.5, 1.7):
        K = ctx.kernel_mass(np.array([s]))[0]
        for n, lam in enumerate(DIR4.eigenvalues):
            # substituting u = tau^g removes the endpoint singularity
            ref = integrate.quad(lambda u: ml_eval(gamma, gamma, -lam * u), 0.0, s**gamma,
                                 epsabs=1e-14, epsrel=1e-12)[0] / gamma
            assert K[n] == pytest.approx(ref, rel=1e-9)


def test_kernel_mass_nonpositive_lag_is_zero():
    K = PropagatorContext(DIR4, 0.5).kernel_mass(np.array([0.0, -1.0]))
    assert np.all(K == 0.0)


@given(st.floats(0.05, 0.99), st.floats(0.0, 50.0), st.lists(st.floats(-10, 10), min_size=4, max_size=4))
def test_S_is_contraction(gamma, t, c):
    v = SpectralField(np.array(c), DIR4)
    Sv = apply_S(PropagatorContext(DIR4, gamma), t, v)
    assert np.linalg.norm(Sv.coefficients) <= np.linalg.norm(v.coefficients) * (1 + 1e-12)
    f = PropagatorContext(DIR4, gamma).s_factors(t)
    assert np.all(f > 0) and np.all(f <= 1.0 + 1e-14)
    assert np.all(np.diff(f) <= 1e-15)


@pytest.mark.parametrize("t", [0.25, 1.0])
def test_S_subordination_representation(t):
    # E_g(-lam t^g) = int_0^inf M_g(tau) exp(-lam tau t^g) dtau
    ctx = PropagatorContext(DIR4, 0.5)
    ref = [integrate.quad(lambda tau: wright_eval(0.5, tau) * math.exp(-lam * tau * t**0.5),
                          0.0, WRIGHT_T_MAX, limit=200)[0] for lam in DIR4.eigenvalues]
    np.testing.assert_allclose(ctx.s_factors(t), ref, atol=1e-4)


def test_kernel_table_cache():
    clear_cache()
    ctx = PropagatorContext(DIR4, 0.5)
    g1 = GradedTimeGrid(1.0, 8, 2.0)
    g2 = GradedTimeGrid(1.0, 8, 2.0)
    assert kernel_table(ctx, g1) is kernel_table(ctx, g2)
    assert kernel_table(ctx, g1) is not kernel_table(PropagatorContext(DIR4, 0.6), g1)
    assert kernel_table(ctx, g1) is not kernel_table(ctx, GradedTimeGrid(1.0, 8, 1.5))


def test_history_matches_full_sum():
    ctx = PropagatorContext(DIR4, 0.5)
    g = GradedTimeGrid(1.0, 10, 2.0)
    tab = kernel_table(ctx, g)
    G = np.random.default_rng(0).standard_normal((11, 4))
    for j in range(11):
        ref = np.einsum("kn,kn->n", tab.W[j, :j], G[:j])
        np.testing.assert_allclose(tab.history(j, G), ref, rtol=1e-13, atol=1e-15)


def test_convolve_shape_validation():
    with pytest.raises(ValueError):
        convolve_P_array(PropagatorContext(DIR4, 0.5), GradedTimeGrid(1.0, 4, 1.0), np.zeros((4, 4)))
