import mpmath
import numpy as np
import pytest
from scipy import stats

from msmw.truncnorm import TAIL_START, sample_truncated_normal, standard_normal_above

mpmath.mp.dps = 40


def mean_above(a):
    """E[Z | Z > a] by high-precision quadrature of the truncated density."""
    a = mpmath.mpf(a)
    pdf = lambda x: mpmath.exp(-x * x / 2)
    return float(mpmath.quad(lambda x: x * pdf(x), [a, mpmath.inf]) / mpmath.quad(pdf, [a, mpmath.inf]))


def test_quadrature_oracle_matches_mills_ratio():
    for a in (-2.0, 0.0, 1.5, 6.0):
        mills = float(mpmath.npdf(a) / (1 - mpmath.ncdf(a)))
        assert mean_above(a) == pytest.approx(mills, rel=1e-12)


@pytest.mark.parametrize("a", [-8.0, -3.0, -0.5, 0.0, 1.0, 2.9, 3.0, 3.5, 8.0, 20.0])
def test_mean_above(a, rng):
    z = standard_normal_above(np.full(200_000, a), rng)
    assert np.all(np.isfinite(z)) and np.all(z > a)
    assert z.mean() == pytest.approx(mean_above(a), abs=0.01)


@pytest.mark.parametrize("a", [-1.0, 0.7, 2.5, 4.0])
def test_distribution_matches_scipy(a, rng):
    z = standard_normal_above(np.full(20_000, a), rng)
    p = stats.kstest(z, stats.truncnorm(a, np.inf).cdf).pvalue
    assert p > 1e-3


def test_mixed_bounds_vectorized(rng):
    a = np.array([-5.0, 0.0, TAIL_START, 12.0] * 1000)
    z = standard_normal_above(a, rng)
    assert z.shape == a.shape and np.all(z > a)


def test_upper_bound_mirrors(rng):
    x = sample_truncated_normal(1.0, upper=0.0, rng=rng, size=100_000)
    assert np.all(x < 0)
    assert x.mean() == pytest.approx(1.0 - mean_above(1.0), abs=0.01)


def test_exactly_one_bound():
    with pytest.raises(ValueError):
        sample_truncated_normal(0.0)
    with pytest.raises(ValueError):
        sample_truncated_normal(0.0, lower=0.0, upper=1.0)


def test_scalar_return(rng):
    assert isinstance(sample_truncated_normal(0.0, lower=1.0, rng=rng), float)


def test_reproducible():
    a = np.linspace(-4, 9, 50)
    z1 = standard_normal_above(a, np.random.default_rng(5))
    z2 = standard_normal_above(a, np.random.default_rng(5))
    np.testing.assert_array_equal(z1, z2)
