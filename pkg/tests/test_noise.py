import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from ptr_accountant.errors import DomainError, ParameterError
from ptr_accountant.noise import (
    OutsideClassicRegimeWarning,
    gaussian_dp_eps,
    gaussian_rdp_eps,
    laplace_pure_dp_eps,
    laplace_rdp_eps,
    sample_gaussian_vec,
    sample_laplace,
)


def renyi_laplace_by_integration(b, alpha):
    """Renyi divergence D_alpha(Lap(1, b) || Lap(0, b)) by direct numerical integration."""

    def log_p(x):
        return -abs(x - 1) / b - math.log(2 * b)

    def log_q(x):
        return -abs(x) / b - math.log(2 * b)

    def integrand(x):
        return math.exp(alpha * log_p(x) + (1 - alpha) * log_q(x))

    total = 0.0
    for lo, hi in [(-np.inf, 0.0), (0.0, 1.0), (1.0, np.inf)]:
        total += integrate.quad(integrand, lo, hi, epsabs=0, epsrel=1e-13, limit=200)[0]
    return math.log(total) / (alpha - 1)


def test_laplace_sampler_moments_and_tail():
    rng = np.random.default_rng(1)
    x = sample_laplace(0.0, 1.0, rng, size=1_000_000)
    assert abs(x.mean()) < 0.01
    tail = np.mean(x > math.log(1 / (2 * 0.05)))
    assert abs(tail - 0.05) < 0.002


def test_laplace_sampler_rejects_bad_scale():
    with pytest.raises(ParameterError):
        sample_laplace(0.0, 0.0, np.random.default_rng(0))
    with pytest.raises(ParameterError):
        sample_laplace(0.0, -1.0, np.random.default_rng(0))


def test_samplers_are_seed_deterministic():
    a = sample_laplace(0.5, 2.0, np.random.default_rng(42), size=100)
    b = sample_laplace(0.5, 2.0, np.random.default_rng(42), size=100)
    np.testing.assert_array_equal(a, b)
    g1 = sample_gaussian_vec([1.0, 2.0], 3.0, np.random.default_rng(7))
    g2 = sample_gaussian_vec([1.0, 2.0], 3.0, np.random.default_rng(7))
    np.testing.assert_array_equal(g1, g2)


def test_gaussian_sampler_variance_and_tiny_sigma():
    rng = np.random.default_rng(3)
    out = sample_gaussian_vec(np.zeros((1_000_000, 3)), 1.0, np.random.default_rng(4))
    assert out.shape == (1_000_000, 3)
    assert np.all(np.abs(out.var(axis=0) - 1) < 0.01)
    np.testing.assert_allclose(sample_gaussian_vec([5.0, -5.0], 1e-12, rng), [5.0, -5.0], atol=1e-9)
    with pytest.raises(ParameterError):
        sample_gaussian_vec([0.0], 0.0, rng)


def test_samplers_pass_ks():
    lap = sample_laplace(0.0, 1.5, np.random.default_rng(11), size=100_000)
    assert stats.kstest(lap, stats.laplace(scale=1.5).cdf).pvalue > 0.01
    gauss = sample_gaussian_vec(np.zeros(100_000), 2.0, np.random.default_rng(12))
    assert stats.kstest(gauss, stats.norm(scale=2.0).cdf).pvalue > 0.01


@pytest.mark.parametrize("b, expected", [(1.0, 1.0), (2.0, 0.5), (0.5, 2.0)])
def test_laplace_pure_dp(b, expected):
    assert laplace_pure_dp_eps(b) == expected


@pytest.mark.parametrize("b, alpha", [(1.0, 2.0), (2.0, 2.0), (0.7, 3.5), (1.0, 1.5), (3.0, 8.0)])
def test_laplace_rdp_matches_integration(b, alpha):
    assert laplace_rdp_eps(b, alpha) == pytest.approx(renyi_laplace_by_integration(b, alpha), rel=1e-9)


def test_laplace_rdp_reference_values():
    # values of the integration oracle
    assert laplace_rdp_eps(1.0, 2.0) == pytest.approx(0.6191236299985927, abs=1e-12)
    assert laplace_rdp_eps(2.0, 2.0) == pytest.approx(renyi_laplace_by_integration(2.0, 2.0), abs=1e-12)
    assert laplace_rdp_eps(1.0, 1e6) == pytest.approx(1.0, abs=1e-4)


def test_laplace_rdp_large_order_does_not_overflow():
    for alpha in [500.0, 1e4, 1e8]:
        eps = laplace_rdp_eps(0.01, alpha)
        assert math.isfinite(eps) and eps <= 100.0


def test_laplace_rdp_domain():
    with pytest.raises(DomainError):
        laplace_rdp_eps(1.0, 1.0)
    with pytest.raises(DomainError):
        gaussian_rdp_eps(1.0, 0.5)


def test_laplace_rdp_monotone_and_capped():
    for b in [0.3, 1.0, 4.0]:
        vals = [laplace_rdp_eps(b, a) for a in [1.5, 2, 4, 8, 32]]
        assert all(x <= y for x, y in zip(vals, vals[1:]))
        assert all(v <= 1 / b for v in vals)


@given(b=st.floats(0.05, 50), alpha=st.floats(1.01, 300))
@settings(max_examples=200, deadline=None)
def test_laplace_rdp_never_exceeds_pure_dp(b, alpha):
    eps = laplace_rdp_eps(b, alpha)
    assert 0 <= eps <= 1 / b * (1 + 1e-12)


def test_gaussian_rdp_values():
    assert gaussian_rdp_eps(1.0, 2.0) == 1.0
    assert gaussian_rdp_eps(2.0, 3.0) == 0.375


@given(sigma=st.floats(0.1, 100), alpha=st.floats(1.01, 200))
@settings(max_examples=100, deadline=None)
def test_gaussian_rdp_linear_in_alpha(sigma, alpha):
    assert gaussian_rdp_eps(sigma, 2 * alpha) == pytest.approx(2 * gaussian_rdp_eps(sigma, alpha), rel=1e-14)
    assert gaussian_rdp_eps(2 * sigma, alpha) == pytest.approx(gaussian_rdp_eps(sigma, alpha) / 4, rel=1e-14)


def test_gaussian_dp_values():
    s = math.sqrt(2 * math.log(1.25e5))
    assert gaussian_dp_eps(s, 1e-5) == pytest.approx(1.0, rel=1e-14)
    assert gaussian_dp_eps(5.0, 1e-5) == pytest.approx(math.sqrt(2 * math.log(1.25 / 1e-5)) / 5.0, rel=1e-14)
    assert gaussian_dp_eps(10.0, 1e-5) == pytest.approx(gaussian_dp_eps(5.0, 1e-5) / 2, rel=1e-14)


def test_gaussian_dp_flags_outside_classic_regime():
    with pytest.warns(OutsideClassicRegimeWarning):
        gaussian_dp_eps(1.0, 1e-5)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        gaussian_dp_eps(10.0, 1e-5)
    with pytest.raises(DomainError):
        gaussian_dp_eps(1.0, 1.0)
