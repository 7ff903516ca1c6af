import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from inequality_process import gamma_core as gc
from inequality_process.errors import DomainError

shapes = st.floats(0.4, 12.0)
rates = st.floats(1e-5, 5.0)


def _bisect_quantile(p, q):
    # independent oracle: plain bisection on the regularized cdf
    lo, hi = 0.0, 1.0
    while gc.cdf(p, hi) < q:
        hi *= 2
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if gc.cdf(p, mid) < q:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def test_alpha_from_omega_values():
    assert gc.alpha_from_omega(0.5) == 1.0
    assert gc.alpha_from_omega(0.25) == 3.0
    for bad in (0.0, 1.0, -0.1, 1.2):
        with pytest.raises(DomainError):
            gc.alpha_from_omega(bad)


def test_lambda_and_conditional_mean():
    ctx = gc.MacroContext(0.3, 0.35, 30000.0)
    lam = gc.lambda_from_context(ctx)
    assert lam == pytest.approx(0.7 / (0.35 * 30000.0), rel=1e-15)
    p = ctx.gamma_params()
    assert p.mean() == pytest.approx(ctx.conditional_mean(), rel=1e-14)
    assert ctx.conditional_mean() == pytest.approx(0.35 * 30000.0 / 0.3, rel=1e-15)


@pytest.mark.parametrize("a,lam", [(0.7, 1e-4), (1.1776, 1e-5), (2.0, 1.0), (3.6318, 1e-4)])
def test_pdf_integrates_to_one(a, lam):
    p = gc.GammaParams(a, lam)
    # integrate on the standardized axis so quad sees an O(1) scale
    total, _ = integrate.quad(lambda z: gc.pdf(p, z / lam) / lam, 0, np.inf, limit=200)
    assert total == pytest.approx(1.0, abs=1e-8)


def test_pdf_matches_closed_form():
    p = gc.GammaParams(2.5, 0.3)
    x = np.array([0.1, 1.0, 7.0, 40.0])
    ref = [0.3 ** 2.5 * v ** 1.5 * math.exp(-0.3 * v) / math.gamma(2.5) for v in x]
    np.testing.assert_allclose(gc.pdf(p, x), ref, rtol=1e-13)


def test_pdf_at_zero_and_negative():
    assert gc.pdf(gc.GammaParams(2.0, 1.0), 0.0) == 0.0
    assert gc.pdf(gc.GammaParams(1.0, 2.0), 0.0) == pytest.approx(2.0)
    with pytest.raises(DomainError):
        gc.pdf(gc.GammaParams(0.5, 1.0), 0.0)
    with pytest.raises(DomainError):
        gc.pdf(gc.GammaParams(2.0, 1.0), -1.0)


def test_cdf_against_quadrature():
    p = gc.GammaParams(1.7924, 1e-4)
    for x in (1e3, 1.5e4, 6e4):
        ref, _ = integrate.quad(lambda t: gc.pdf(p, t), 0, x, limit=200)
        assert gc.cdf(p, x) == pytest.approx(ref, abs=1e-10)


def test_quantile_exponential_median():
    assert gc.quantile(gc.GammaParams(1.0, 1.0), 0.5) == pytest.approx(math.log(2), rel=1e-14)


@pytest.mark.parametrize("m", [0.1, 1.0, 5.0])
def test_cdf_quantile_inverse_pair(m):
    p = gc.GammaParams(2.0619, 1e-4)
    x = m * p.mean()
    assert gc.quantile(p, gc.cdf(p, x)) == pytest.approx(x, rel=1e-8)


def test_quantile_known_value():
    # median of gamma(2, 1): root of 1 - (1 + x) e^-x = 1/2
    assert gc.quantile(gc.GammaParams(2.0, 1.0), 0.5) == pytest.approx(1.6783469900166612, rel=1e-14)


def test_quantile_against_bisection():
    p = gc.GammaParams(1.4544, 2e-5)
    for q in (0.001, 0.1, 0.5, 0.9, 0.999):
        assert gc.quantile(p, q) == pytest.approx(_bisect_quantile(p, q), rel=1e-10)


def test_quantile_domain():
    p = gc.GammaParams(2.0, 1.0)
    for bad in (0.0, 1.0, -0.1, 1.1, float("nan")):
        with pytest.raises(DomainError):
            gc.quantile(p, bad)


@settings(max_examples=60, deadline=None)
@given(shapes, rates, st.floats(1e-6, 1 - 1e-6))
def test_quantile_roundtrip_property(a, lam, q):
    p = gc.GammaParams(a, lam)
    assert abs(gc.cdf(p, gc.quantile(p, q)) - q) < 1e-9


@settings(max_examples=40, deadline=None)
@given(shapes, rates, st.floats(0.01, 0.98), st.floats(0.001, 0.01))
def test_quantile_monotone_property(a, lam, q, dq):
    p = gc.GammaParams(a, lam)
    assert gc.quantile(p, q) < gc.quantile(p, q + dq)


@settings(max_examples=40, deadline=None)
@given(shapes, st.floats(1e-5, 1e-3))
def test_bin_masses_sum_to_one(a, lam):
    p = gc.GammaParams(a, lam)
    edges = [0.0] + [10_000.0 * k for k in range(1, 15)] + [math.inf]
    m = gc.bin_masses(p, edges)
    assert np.all(m >= 0)
    assert abs(math.fsum(m) - 1.0) < 1e-12


def test_bin_mass_matches_cdf_difference_and_far_tail():
    p = gc.GammaParams(3.0, 1e-4)
    assert gc.bin_mass(p, 1e4, 2e4) == pytest.approx(gc.cdf(p, 2e4) - gc.cdf(p, 1e4), rel=1e-12)
    # deep upper tail: survival route keeps relative accuracy where cdf differences cancel
    ref, _ = integrate.quad(lambda t: gc.pdf(p, t), 4e5, 5e5)
    assert gc.bin_mass(p, 4e5, 5e5) == pytest.approx(ref, rel=1e-7)
    with pytest.raises(DomainError):
        gc.bin_mass(p, 2.0, 1.0)


def test_doodson_median():
    p = gc.GammaParams(2.0, 0.5)
    assert gc.doodson_median(p) == pytest.approx(5.0 / 1.5)
    with pytest.raises(DomainError, match="1/3"):
        gc.doodson_median(gc.GammaParams(0.3, 1.0))


def test_conditional_median_from_context_formula():
    ctx = gc.MacroContext(0.3, 0.32, 40000.0)
    expected = (1 - 0.4) / 0.7 * 0.32 * 40000.0 / 0.3
    assert gc.conditional_median_from_context(ctx) == pytest.approx(expected, rel=1e-14)
    assert gc.conditional_median_from_context(ctx) == pytest.approx(gc.doodson_median(ctx.gamma_params()), rel=1e-14)


def _mixture():
    comps = (gc.GammaParams(1.2, 1e-4), gc.GammaParams(3.0, 1e-4), gc.GammaParams(2.0, 5e-5))
    return gc.MixtureModel((0.5, 0.3, 0.2), comps)


def test_mixture_validation():
    with pytest.raises(DomainError):
        gc.MixtureModel((0.5, 0.4), (gc.GammaParams(1, 1), gc.GammaParams(2, 1)))
    with pytest.raises(DomainError):
        gc.MixtureModel((1.2, -0.2), (gc.GammaParams(1, 1), gc.GammaParams(2, 1)))
    with pytest.raises(DomainError):
        gc.MixtureModel((1.0,), (gc.GammaParams(1, 1), gc.GammaParams(2, 1)))


def test_mixture_mean_and_pdf_integral():
    m = _mixture()
    assert gc.mixture_mean(m) == pytest.approx(0.5 * 12000 + 0.3 * 30000 + 0.2 * 40000, rel=1e-14)
    total, _ = integrate.quad(lambda x: gc.mixture_pdf(m, x), 0, np.inf, limit=200)
    assert total == pytest.approx(1.0, abs=1e-8)


@settings(max_examples=40, deadline=None)
@given(st.floats(1e-4, 1 - 1e-4))
def test_mixture_quantile_roundtrip(q):
    m = _mixture()
    x = gc.mixture_quantile(m, q)
    assert abs(gc.mixture_cdf(m, x) - q) < 1e-10
