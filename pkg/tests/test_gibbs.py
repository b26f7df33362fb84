import numpy as np
import pytest
from scipy import stats

from conftest import make_data
from msmw.config import ChainSettings, ModelSpec, OutcomeVector, VariancePrior
from msmw.errors import ConditioningError, FamilyMismatchError
from msmw.gibbs import (
    draw_latent_z,
    draw_sigma2,
    draw_tau,
    effective_sample_size,
    gaussian_posterior_draw,
    run_binary,
    run_chain,
    run_continuous,
    sigma2_posterior,
)
from msmw.tensor import MultiWayPredictors, SourcePartition


def dense_posterior(Xd, y, prior_var, sigma2):
    """Textbook conjugate posterior via explicit inverses."""
    prec = Xd.T @ Xd / sigma2 + np.diag(1 / prior_var)
    cov = np.linalg.inv(prec)
    return cov @ Xd.T @ y / sigma2, cov


@pytest.mark.parametrize("n, p", [(40, 5), (4, 9)])
def test_gaussian_draw_moments(n, p, rng):
    Xd = rng.standard_normal((n, p))
    y = rng.standard_normal(n)
    pv = rng.uniform(0.5, 2.0, p)
    mean, cov = dense_posterior(Xd, y, pv, 0.7)
    draws = np.array([gaussian_posterior_draw(Xd, y, pv, 0.7, rng) for _ in range(20_000)])
    np.testing.assert_allclose(draws.mean(0), mean, atol=4 * np.sqrt(np.diag(cov).max() / 20_000) + 1e-3)
    np.testing.assert_allclose(np.cov(draws.T), cov, atol=0.05 * np.abs(cov).max())


def test_singular_precision_raises(rng):
    with pytest.raises(ConditioningError):
        gaussian_posterior_draw(np.zeros((5, 2)), np.zeros(5), np.full(2, np.inf), 1.0, rng)


def test_tau_conditional_parameters(rng):
    part = SourcePartition((2, 3))
    W = np.arange(10.0).reshape(5, 2) / 10
    priors = (VariancePrior(2.0, 1.0), VariancePrior(1.0, 0.5))
    draws = np.array([draw_tau(W, part, priors, rng) for _ in range(40_000)])
    # IG(a, b) mean b / (a - 1)
    a1, b1 = 2.0 + 4 / 2, 1.0 + np.sum(W[:2] ** 2) / 2
    a2, b2 = 1.0 + 6 / 2, 0.5 + np.sum(W[2:] ** 2) / 2
    np.testing.assert_allclose(draws.mean(0), [b1 / (a1 - 1), b2 / (a2 - 1)], rtol=0.02)
    assert stats.kstest(draws[:, 1], stats.invgamma(a2, scale=b2).cdf).pvalue > 1e-3


def test_sigma2_conditional_parameters(rng):
    X, y, B = make_data(rng, N=20)
    resid = y.values - np.einsum("npd,pd->n", X.values, B)
    a, b = sigma2_posterior(y.values, X, B, VariancePrior(0.5, 0.25))
    assert a == 0.5 + 10 and b == pytest.approx(0.25 + resid @ resid / 2)
    d = np.array([draw_sigma2(y.values, X, B, rng, VariancePrior(0.5, 0.25)) for _ in range(20_000)])
    assert d.mean() == pytest.approx(b / (a - 1), rel=0.02)


def test_latent_z_signs(rng):
    X, y, B = make_data(rng, N=50, family="binary")
    z = draw_latent_z(y.values, X, B, rng)
    assert np.all((z > 0) == (y.values == 1))


def small_spec(rank=1, family="continuous", mode="multi", T=300, burn=100, seed=1, **kw):
    n = 1 if mode == "single" else 2
    return ModelSpec(rank=rank, source_mode=mode, family=family,
                     tau_priors=(VariancePrior(1.0, 1.0),) * n, chain=ChainSettings(T, burn, seed), **kw)


@pytest.mark.parametrize("rank, family, mode", [
    (1, "continuous", "multi"), (2, "continuous", "single"), (None, "continuous", "multi"),
    (1, "binary", "multi"), (None, "binary", "single"), (2, "binary", "multi"),
])
def test_engines_agree(rank, family, mode, rng):
    X, y, _ = make_data(rng, N=25, family=family)
    spec = small_spec(rank, family, mode)
    a = run_chain(X, y, spec, engine="numpy")
    b = run_chain(X, y, spec, engine="numba")
    np.testing.assert_allclose(a.B, b.B, rtol=1e-8, atol=1e-10)
    np.testing.assert_allclose(a.tau, b.tau, rtol=1e-8)
    np.testing.assert_allclose(a.sigma2, b.sigma2, rtol=1e-8)


def test_engines_agree_high_dimensional(rng):
    # P*D > N exercises the data-space draw in both engines
    X, y, _ = make_data(rng, N=8, sizes=(6, 5), D=2, family="binary")
    spec = small_spec(None, "binary", T=60, burn=10)
    a = run_chain(X, y, spec, engine="numpy")
    b = run_chain(X, y, spec, engine="numba")
    np.testing.assert_allclose(a.B, b.B, rtol=1e-7, atol=1e-9)


def test_same_seed_same_chain(rng):
    X, y, _ = make_data(rng)
    spec = small_spec()
    a, b = run_chain(X, y, spec), run_chain(X, y, spec)
    assert a.B.tobytes() == b.B.tobytes() and a.tau.tobytes() == b.tau.tobytes()
    c = run_chain(X, y, spec.with_chain(seed=2))
    assert not np.array_equal(a.B, c.B)


def test_draw_shapes_and_meta(rng):
    X, y, _ = make_data(rng)
    d = run_continuous(X, y, small_spec(rank=2))
    assert d.B.shape == (200, 5, 4) and d.tau.shape == (200, 2) and d.sigma2.shape == (200,)
    assert d.meta["seed"] == 1 and d.meta["burn_in"] == 100
    with pytest.raises(ValueError):
        d.B[0, 0, 0] = 1.0


def test_family_dispatch_errors(rng):
    X, y, _ = make_data(rng)
    with pytest.raises(FamilyMismatchError):
        run_binary(X, y, small_spec(family="binary"))


def test_fixed_variances_are_respected(rng):
    X, y, _ = make_data(rng)
    d = run_chain(X, y, small_spec(sigma2=0.5, fixed_tau=(2.0, 3.0)))
    assert np.all(d.sigma2 == 0.5) and np.all(d.tau == [2.0, 3.0])


def test_full_rank_posterior_closed_form(rng):
    # tau and sigma2 fixed: the chain targets the conjugate Gaussian posterior
    X, y, _ = make_data(rng, N=40, sizes=(2, 1), D=2)
    spec = small_spec(None, T=6000, burn=500, sigma2=1.0, fixed_tau=(0.5, 2.0))
    d = run_chain(X, y, spec)
    Xd = X.values.transpose(0, 2, 1).reshape(40, -1)
    pv = np.tile([0.5, 0.5, 2.0], 2)
    mean, _ = dense_posterior(Xd, y.values, pv, 1.0)
    np.testing.assert_allclose(d.B_mean.T.ravel(), mean, atol=0.02)


def test_source_relabel_invariance(rng):
    # swapping the two sources (data and priors) permutes the posterior
    N = 60
    X, y, _ = make_data(rng, N=N, sizes=(2, 3), D=3)
    priors = (VariancePrior(1.0, 1.0), VariancePrior(2.0, 0.5))
    spec = ModelSpec(rank=1, tau_priors=priors, chain=ChainSettings(4000, 500, 9))
    d1 = run_chain(X, y, spec)
    perm = [2, 3, 4, 0, 1]
    X2 = MultiWayPredictors(X.values[:, perm, :], SourcePartition((3, 2)))
    d2 = run_chain(X2, y, ModelSpec(rank=1, tau_priors=priors[::-1], chain=ChainSettings(4000, 500, 10)))
    np.testing.assert_allclose(d2.B_mean, d1.B_mean[perm], atol=0.05)
    np.testing.assert_allclose(np.median(d2.tau, 0), np.median(d1.tau, 0)[::-1], rtol=0.15)


def test_effective_sample_size():
    rng = np.random.default_rng(0)
    white = rng.standard_normal(4000)
    assert 3000 < effective_sample_size(white) <= 4000 * 1.2
    ar = np.zeros(4000)
    for t in range(1, 4000):
        ar[t] = 0.9 * ar[t - 1] + rng.standard_normal()
    # AR(1) with phi = 0.9 has ESS ~ n (1 - phi) / (1 + phi)
    assert effective_sample_size(ar) == pytest.approx(4000 * 0.1 / 1.9, rel=0.4)
