import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cbdemand.distributions import (
    NegBinDistribution,
    ParameterDomainError,
    PoissonDistribution,
    TAIL_CUT,
    dispersion_from_variance,
    nbd_cdf,
    nbd_cdf_array,
    nbd_pmf,
    nbd_pmf_array,
    nbd_quantile,
    nbd_quantile_array,
    variance_from_dispersion,
)

mpmath.mp.dps = 50


def mp_pmf(y, mu, inv_r):
    """High-precision reference pmf straight from the Gamma-function formula."""
    mu = mpmath.mpf(mu)
    if inv_r == 0:
        return mpmath.exp(-mu) * mu**y / mpmath.factorial(y)
    r = 1 / mpmath.mpf(inv_r)
    return (
        mpmath.gamma(r + y) / (mpmath.factorial(y) * mpmath.gamma(r))
        * (r / (r + mu)) ** r
        * (mu / (r + mu)) ** y
    )


def truncated_support(d):
    y = np.arange(0, d.support_limit() + 1)
    return y, nbd_pmf_array(y, d.mu, d.inv_r)


# frozen with mp_pmf above (50 digits)
PMF_5_328_04 = float(mp_pmf(5, 3.28, 0.4))
CDF_4_328_04 = float(sum(mp_pmf(k, 3.28, 0.4) for k in range(5)))


class TestPmf:
    def test_zero_mu1_r1(self):
        assert nbd_pmf(0, NegBinDistribution(1.0, 1.0)) == pytest.approx(0.5, rel=1e-14)

    def test_one_mu1_r1(self):
        assert nbd_pmf(1, NegBinDistribution(1.0, 1.0)) == pytest.approx(0.25, rel=1e-14)

    def test_poisson_identity(self):
        expected = math.exp(-2.7) * 2.7**3 / 6
        assert nbd_pmf(3, NegBinDistribution(2.7, 0.0)) == pytest.approx(expected, rel=1e-14)

    def test_high_precision_reference(self):
        assert nbd_pmf(5, NegBinDistribution(3.28, 0.4)) == pytest.approx(PMF_5_328_04, rel=1e-12)

    @pytest.mark.parametrize("inv_r", [1e-10, 1e-6, 0.01, 0.37, 1.0])
    @pytest.mark.parametrize("y", [0, 1, 7, 60, 400])
    def test_matches_mpmath_grid(self, y, inv_r):
        mu = 12.5
        ref = float(mp_pmf(y, mu, inv_r))
        got = nbd_pmf(y, NegBinDistribution(mu, inv_r))
        if ref < 1e-300:
            assert got < 1e-290
        else:
            assert got == pytest.approx(ref, rel=1e-9)

    def test_poisson_limit_exact_branch(self):
        d = PoissonDistribution(4.2)
        y = np.arange(51)
        direct = np.array([math.exp(-4.2) * 4.2**k / math.factorial(k) for k in y])
        np.testing.assert_allclose(nbd_pmf_array(y, d.mu, d.inv_r), direct, rtol=0, atol=1e-12)

    @pytest.mark.parametrize("mu,inv_r", [(0.0, 0.1), (-1, 0.1), (1.0, -0.1), (1.0, 1.5), (np.nan, 0.1)])
    def test_domain_errors(self, mu, inv_r):
        with pytest.raises(ParameterDomainError):
            NegBinDistribution(mu, inv_r)

    def test_negative_y_rejected(self):
        with pytest.raises(ParameterDomainError):
            nbd_pmf(-1, NegBinDistribution(1.0, 0.5))


class TestCdf:
    def test_equals_pmf0(self):
        assert nbd_cdf(0, NegBinDistribution(1.0, 1.0)) == pytest.approx(0.5, rel=1e-14)

    def test_partial_sum_reference(self):
        assert nbd_cdf(4, NegBinDistribution(3.28, 0.4)) == pytest.approx(CDF_4_328_04, rel=1e-12)

    def test_tail_normalization(self):
        d = NegBinDistribution(3.28, 0.4)
        assert nbd_cdf(d.support_limit(), d) == pytest.approx(1.0, abs=1e-9)

    def test_negative_is_zero(self):
        assert nbd_cdf(-1, NegBinDistribution(2.0, 0.3)) == 0.0
        assert nbd_cdf_array(-1, 2.0, 0.3) == 0.0

    @pytest.mark.parametrize("mu,inv_r", [(3.28, 0.4), (0.2, 1.0), (55.0, 0.02), (7.0, 0.0)])
    def test_array_path_agrees_with_summation(self, mu, inv_r):
        d = NegBinDistribution(mu, inv_r)
        ys = np.arange(0, d.support_limit())
        summed = np.array([nbd_cdf(int(k), d) for k in ys])
        np.testing.assert_allclose(nbd_cdf_array(ys, mu, inv_r), summed, atol=1e-12)


class TestQuantile:
    def test_q0_is_zero(self):
        assert nbd_quantile(0.0, NegBinDistribution(5.0, 0.2)) == 0

    def test_generalized_inverse_strict(self):
        assert nbd_quantile(0.49, NegBinDistribution(1.0, 1.0)) == 0

    def test_against_linear_scan(self):
        d = NegBinDistribution(3.28, 0.4)
        x = 0
        while float(sum(mp_pmf(k, 3.28, 0.4) for k in range(x + 1))) <= 0.9:
            x += 1
        assert nbd_quantile(0.9, d) == x

    def test_domain(self):
        with pytest.raises(ParameterDomainError):
            nbd_quantile(1.0, NegBinDistribution(1.0, 0.5))
        with pytest.raises(ParameterDomainError):
            nbd_quantile(-0.1, NegBinDistribution(1.0, 0.5))

    def test_array_matches_scalar(self):
        rng = np.random.default_rng(5)
        mu = rng.uniform(0.05, 80, 300)
        inv_r = rng.uniform(0, 1, 300)
        inv_r[::7] = 0.0
        q = rng.uniform(0, 0.999, 300)
        got = nbd_quantile_array(q, mu, inv_r)
        ref = [nbd_quantile(qq, NegBinDistribution(m, a)) for qq, m, a in zip(q, mu, inv_r)]
        np.testing.assert_array_equal(got, ref)


class TestMoments:
    @pytest.mark.parametrize("mu,inv_r,expected", [(2, 1, 6.0), (3, 0, 3.0), (5, 0.5, 17.5)])
    def test_variance(self, mu, inv_r, expected):
        assert variance_from_dispersion(mu, inv_r) == expected

    @pytest.mark.parametrize("mu,s2,expected", [(2, 6, 1.0), (3, 3, 0.0), (10, 300, 1.0)])
    def test_dispersion(self, mu, s2, expected):
        assert dispersion_from_variance(mu, s2) == expected

    def test_underdispersion_clamped_with_warning(self):
        with pytest.warns(RuntimeWarning, match="1 variance"):
            assert dispersion_from_variance(4.0, 3.0) == 0.0


params = st.tuples(
    st.floats(min_value=0.05, max_value=150.0),
    st.one_of(st.just(0.0), st.floats(min_value=1e-4, max_value=1.0)),
)


@settings(max_examples=60, deadline=None)
@given(params)
def test_normalization(p):
    d = NegBinDistribution(*p)
    _, pmf = truncated_support(d)
    assert pmf[-1] < TAIL_CUT
    assert pmf.sum() == pytest.approx(1.0, abs=1e-9)


@settings(max_examples=60, deadline=None)
@given(params)
def test_moment_identities(p):
    d = NegBinDistribution(*p)
    y, pmf = truncated_support(d)
    mean = np.sum(y * pmf)
    var = np.sum((y - d.mu) ** 2 * pmf)
    assert mean == pytest.approx(d.mu, rel=1e-6)
    assert var == pytest.approx(d.mu + d.mu**2 * d.inv_r, rel=1e-6)


@settings(max_examples=80, deadline=None)
@given(params, st.floats(min_value=0.0, max_value=0.999))
def test_quantile_cdf_duality(p, q):
    d = NegBinDistribution(*p)
    x = nbd_quantile(q, d)
    assert nbd_cdf(x, d) > q
    assert nbd_cdf(x - 1, d) <= q


@given(st.floats(min_value=0.01, max_value=1e3), st.floats(min_value=0.0, max_value=1.0))
def test_dispersion_roundtrip(mu, inv_r):
    s2 = variance_from_dispersion(mu, inv_r)
    assert dispersion_from_variance(mu, s2) == pytest.approx(inv_r, abs=1e-9)
