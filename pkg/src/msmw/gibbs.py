"""Full-conditional draws and the continuous / probit Gibbs samplers.

Random numbers come from a ``numpy.random.Generator`` (PCG64). The draw
order inside one sweep is fixed: V, then W (or B for full-rank models),
then tau, then sigma2 or the latent z. Within a Gaussian block the
standard normals are consumed in ``vec`` order, so identical seeds give
bit-identical chains.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import lapack

from .config import DEFAULT_SIGMA2_PRIOR, ModelSpec, OutcomeVector, VariancePrior, validate
from .errors import ConditioningError, FamilyMismatchError, ShapeError
from .tensor import (
    MultiWayPredictors,
    SourcePartition,
    build_design_given_V,
    build_design_given_W,
    flatten_non_multiway,
    inner_products,
)
from .truncnorm import standard_normal_above

log = logging.getLogger(__name__)

JITTER_FRACTION = 1e-8


@dataclass
class SamplerState:
    W: Optional[np.ndarray]
    V: Optional[np.ndarray]
    tau: np.ndarray
    sigma2: float
    B: np.ndarray
    z: Optional[np.ndarray] = None


@dataclass(frozen=True, eq=False)
class PosteriorDraws:
    """Post-burn-in draws. ``B`` has shape ``(T', P, D)``, ``tau`` ``(T', M)``."""

    B: np.ndarray
    tau: np.ndarray
    sigma2: np.ndarray
    partition: SourcePartition
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for arr in (self.B, self.tau, self.sigma2):
            arr.setflags(write=False)

    def __len__(self):
        return self.B.shape[0]

    @property
    def B_mean(self) -> np.ndarray:
        return self.B.mean(axis=0)


# -- linear-Gaussian block -------------------------------------------------


def _cholesky(A: np.ndarray, what: str) -> np.ndarray:
    L, info = lapack.dpotrf(A, lower=1, clean=1)
    if info == 0:
        return L
    jitter = JITTER_FRACTION * float(np.mean(np.diag(A)))
    log.warning("%s: precision not positive definite, adding jitter %.3g", what, jitter)
    L, info = lapack.dpotrf(A + jitter * np.eye(A.shape[0]), lower=1, clean=1)
    if info != 0:
        raise ConditioningError(f"{what}: posterior precision is numerically singular")
    return L


def gaussian_posterior_draw(
    design: np.ndarray,
    response: np.ndarray,
    prior_var: np.ndarray,
    sigma2: float,
    rng: np.random.Generator,
    what: str = "coefficients",
) -> np.ndarray:
    """One exact draw of ``beta`` from the conjugate posterior of
    ``response ~ N(design @ beta, sigma2 I)``, ``beta ~ N(0, diag(prior_var))``.

    Mean ``(T^-1 s2 + X'X)^-1 X'y``, covariance ``s2 (T^-1 s2 + X'X)^-1``.
    When there are more coefficients than observations the draw uses the
    data-space algorithm of Bhattacharya, Chakraborty & Mallick (2016),
    which factorizes an ``n x n`` matrix instead of a ``p x p`` one.
    """
    n, p = design.shape
    if p <= n:
        A = design.T @ design
        A[np.diag_indices(p)] += sigma2 / prior_var
        L = _cholesky(A, what)
        mean, _ = lapack.dpotrs(L, design.T @ response, lower=1)
        eps = rng.standard_normal(p)
        noise, _ = lapack.dtrtrs(L, eps, lower=1, trans=1)
        return mean + np.sqrt(sigma2) * noise
    sd = np.sqrt(sigma2)
    Phi = design / sd
    u = np.sqrt(prior_var) * rng.standard_normal(p)
    delta = rng.standard_normal(n)
    DPt = prior_var[:, None] * Phi.T
    M = Phi @ DPt
    M[np.diag_indices(n)] += 1.0
    L = _cholesky(M, what)
    w, _ = lapack.dpotrs(L, response / sd - (Phi @ u + delta), lower=1)
    return u + DPt @ w


def _inverse_gamma(shape: float, scale: float, rng: np.random.Generator) -> float:
    return scale / rng.gamma(shape)


# -- full conditionals -----------------------------------------------------


def draw_tau(
    W: np.ndarray,
    partition: SourcePartition,
    priors: Sequence[VariancePrior],
    rng: np.random.Generator,
) -> np.ndarray:
    """``tau_m | W ~ IG(alpha0 + n_m / 2, beta0 + ||W_m||_F^2 / 2)`` where
    ``n_m`` is the number of entries in source block ``m`` (``P_m R`` for a
    factor, ``P_m D`` for a full-rank coefficient matrix)."""
    W = np.atleast_2d(W)
    if W.shape[0] != partition.total:
        raise ShapeError(f"W has {W.shape[0]} rows, partition covers {partition.total}")
    if len(priors) != partition.n_sources:
        raise ShapeError("one prior per source is required")
    out = np.empty(partition.n_sources)
    for m, (sl, prior) in enumerate(zip(partition.slices(), priors)):
        block = W[sl]
        out[m] = _inverse_gamma(
            prior.alpha0 + 0.5 * block.size,
            prior.beta0 + 0.5 * float(np.sum(block * block)),
            rng,
        )
    return out


def feature_variances(tau: np.ndarray, partition: SourcePartition, repeats: int) -> np.ndarray:
    """Diagonal of the prior covariance for ``vec`` of a ``P x repeats`` matrix."""
    return np.tile(np.asarray(tau, dtype=float)[partition.labels()], repeats)


def draw_W(y, X: MultiWayPredictors, V, tau, sigma2, rng, partition=None) -> np.ndarray:
    """``vec(W) | y, V, tau, sigma2`` on the design ``[vec(X_i V)]_i``.

    ``partition`` overrides the variance groups of ``X`` (single-source fits).
    """
    partition = partition or X.partition
    V = np.atleast_2d(V)
    R = V.shape[1]
    design = build_design_given_V(X, V)
    prior_var = feature_variances(tau, partition, R)
    w = gaussian_posterior_draw(design, np.asarray(y, dtype=float), prior_var, sigma2, rng, "W")
    return w.reshape(R, X.P).T


def draw_V(y, X: MultiWayPredictors, W, sigma2, rng) -> np.ndarray:
    """``vec(V) | y, W, sigma2`` on the design ``[vec(X_i^T W)]_i`` with a
    standard-normal prior on every entry of V."""
    W = np.atleast_2d(W)
    R = W.shape[1]
    design = build_design_given_W(X, W)
    v = gaussian_posterior_draw(design, np.asarray(y, dtype=float), np.ones(R * X.D), sigma2, rng, "V")
    return v.reshape(R, X.D).T


def draw_B_full_rank(y, X: MultiWayPredictors, tau, sigma2, rng, partition=None, design=None) -> np.ndarray:
    """``vec(B)`` drawn directly on the flattened ``N x PD`` design."""
    partition = partition or X.partition
    if design is None:
        design = flatten_non_multiway(X)
    prior_var = feature_variances(tau, partition, X.D)
    b = gaussian_posterior_draw(design, np.asarray(y, dtype=float), prior_var, sigma2, rng, "B")
    return b.reshape(X.D, X.P).T


def sigma2_posterior(y, X, B, prior: VariancePrior = DEFAULT_SIGMA2_PRIOR) -> tuple[float, float]:
    """Shape and scale of ``sigma2 | y, B``."""
    y = np.asarray(y, dtype=float)
    resid = y - inner_products(X, B)
    return prior.alpha0 + 0.5 * y.size, prior.beta0 + 0.5 * float(resid @ resid)


def draw_sigma2(y, X, B, rng, prior: VariancePrior = DEFAULT_SIGMA2_PRIOR) -> float:
    """``sigma2 | y, B ~ IG(N/2 + a0, RSS/2 + b0)``."""
    return _inverse_gamma(*sigma2_posterior(y, X, B, prior), rng)


def draw_latent_z(y, X, B, rng, scores=None) -> np.ndarray:
    """Latent probit utilities: ``N(X_i . B, 1)`` truncated to ``z > 0`` when
    ``y_i = 1`` and to ``z < 0`` when ``y_i = 0``."""
    y = np.asarray(y)
    mu = inner_products(X, B) if scores is None else scores
    sign = np.where(y == 1, 1.0, -1.0)
    return mu + sign * standard_normal_above(-sign * mu, rng)


# -- chains ----------------------------------------------------------------


def initialize_state(spec: ModelSpec, partition: SourcePartition, dims, rng, y=None) -> SamplerState:
    """Starting values: ``tau_m = beta0 / alpha0``, ``W ~ N(0, tau_m)``,
    ``V ~ N(0, 1)``, ``sigma2 = 1`` (or its fixed value), ``z = +-0.5``.

    ``partition`` is the effective (variance-group) partition and ``dims``
    is ``(P, D)``.
    """
    P, D = dims
    if spec.fixed_tau is not None:
        tau = np.array(spec.fixed_tau)
    else:
        tau = np.array([p.beta0 / p.alpha0 for p in spec.tau_priors])
    if spec.full_rank:
        W = V = None
        B = np.zeros((P, D))
    else:
        R = spec.rank
        sd = np.sqrt(tau[partition.labels()])
        W = sd[:, None] * rng.standard_normal((P, R))
        V = rng.standard_normal((D, R))
        B = W @ V.T
    sigma2 = float(spec.sigma2) if spec.sigma2_fixed else 1.0
    z = None
    if spec.family == "binary":
        if y is None:
            raise ValueError("binary models need y to initialize z")
        z = np.where(np.asarray(y) == 1, 0.5, -0.5)
    return SamplerState(W=W, V=V, tau=tau, sigma2=sigma2, B=B, z=z)


def _kernel_module():
    try:
        from . import _kernel
    except ImportError:  # numba unavailable
        return None
    return _kernel


def _resolve_engine(engine: str) -> str:
    if engine not in ("auto", "numpy", "numba"):
        raise ValueError(f"unknown engine {engine!r}")
    if engine == "auto":
        return "numba" if _kernel_module() is not None else "numpy"
    return engine


def _sweeps_numpy(X, yv, spec, part, state, rng):
    binary = spec.family == "binary"
    T, burn = spec.chain.iterations, spec.chain.burn_in
    keep = T - burn
    B_out = np.empty((keep, X.P, X.D))
    tau_out = np.empty((keep, part.n_sources))
    s2_out = np.empty(keep)
    flat = flatten_non_multiway(X) if spec.full_rank else None
    update_tau = spec.fixed_tau is None
    update_sigma2 = not binary and not spec.sigma2_fixed

    for t in range(T):
        target = state.z if binary else yv
        try:
            if spec.full_rank:
                state.B = draw_B_full_rank(target, X, state.tau, state.sigma2, rng, part, flat)
                coef = state.B
            else:
                state.V = draw_V(target, X, state.W, state.sigma2, rng)
                state.W = draw_W(target, X, state.V, state.tau, state.sigma2, rng, part)
                state.B = state.W @ state.V.T
                coef = state.W
        except ConditioningError as exc:
            raise ConditioningError(str(exc), iteration=t + 1) from exc
        if update_tau:
            state.tau = draw_tau(coef, part, spec.tau_priors, rng)
        if update_sigma2:
            state.sigma2 = draw_sigma2(yv, X, state.B, rng, spec.sigma2)
        if binary:
            state.z = draw_latent_z(yv, X, state.B, rng)
        if t >= burn:
            k = t - burn
            B_out[k] = state.B
            tau_out[k] = state.tau
            s2_out[k] = state.sigma2
    return B_out, tau_out, s2_out


def _sweeps_numba(X, yv, spec, part, state, rng):
    kernel = _kernel_module()
    binary = spec.family == "binary"
    s2_prior = spec.sigma2 if not spec.sigma2_fixed else DEFAULT_SIGMA2_PRIOR
    P, D = X.P, X.D
    B_out, tau_out, s2_out, status, it, jitters = kernel.run_kernel(
        np.ascontiguousarray(X.values),
        np.ascontiguousarray(flatten_non_multiway(X)) if spec.full_rank else np.zeros((1, 1)),
        np.ascontiguousarray(yv, dtype=float),
        binary,
        0 if spec.full_rank else int(spec.rank),
        part.labels().astype(np.int64),
        part.n_sources,
        np.array([p.alpha0 for p in spec.tau_priors]),
        np.array([p.beta0 for p in spec.tau_priors]),
        np.array(state.tau, dtype=float),
        np.zeros((P, 1)) if state.W is None else state.W.copy(),
        np.zeros((D, 1)) if state.V is None else state.V.copy(),
        float(state.sigma2),
        np.zeros(X.N) if state.z is None else state.z.astype(float),
        s2_prior.alpha0,
        s2_prior.beta0,
        spec.fixed_tau is None,
        not binary and not spec.sigma2_fixed,
        spec.chain.iterations,
        spec.chain.burn_in,
        rng,
    )
    if jitters:
        log.warning("posterior precision needed diagonal jitter %d time(s)", jitters)
    if status == kernel.STATUS_SINGULAR:
        raise ConditioningError("posterior precision is numerically singular", iteration=it)
    return B_out, tau_out, s2_out


def _gibbs(X: MultiWayPredictors, y: OutcomeVector, spec: ModelSpec, rng, engine="auto") -> PosteriorDraws:
    validate(spec, X, y)
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(spec.chain.seed if rng is None else rng)
    engine = _resolve_engine(engine)
    part = spec.effective_partition(X.partition)
    yv = y.values
    state = initialize_state(spec, part, (X.P, X.D), rng, y=yv)
    sweeps = _sweeps_numba if engine == "numba" else _sweeps_numpy
    B_out, tau_out, s2_out = sweeps(X, yv, spec, part, state, rng)
    meta = {
        "seed": spec.chain.seed,
        "iterations": spec.chain.iterations,
        "burn_in": spec.chain.burn_in,
        "spec_fingerprint": spec.fingerprint(),
        "family": spec.family,
        "engine": engine,
    }
    return PosteriorDraws(B=B_out, tau=tau_out, sigma2=s2_out, partition=part, meta=meta)


def run_continuous(X: MultiWayPredictors, y: OutcomeVector, spec: ModelSpec, rng=None, engine="auto") -> PosteriorDraws:
    """Continuous-outcome sampler. Each sweep draws V, W, tau, forms
    ``B = W V^T`` and, unless fixed, draws sigma2."""
    if spec.family != "continuous" or y.family != "continuous":
        raise FamilyMismatchError("run_continuous needs a continuous spec and outcome")
    return _gibbs(X, y, spec, rng, engine)


def run_binary(X: MultiWayPredictors, y: OutcomeVector, spec: ModelSpec, rng=None, engine="auto") -> PosteriorDraws:
    """Probit sampler with latent-variable augmentation; sigma2 = 1."""
    if spec.family != "binary" or y.family != "binary":
        raise FamilyMismatchError("run_binary needs a binary spec and outcome")
    return _gibbs(X, y, spec, rng, engine)


def run_chain(X: MultiWayPredictors, y: OutcomeVector, spec: ModelSpec, rng=None, engine="auto") -> PosteriorDraws:
    """Dispatch on ``spec.family``.

    ``rng`` may be a ``Generator``, an integer seed, or None (use the spec's
    seed). ``engine`` selects the compiled sweep (``"numba"``), the numpy
    reference (``"numpy"``) or whichever is available (``"auto"``).
    """
    run = run_binary if spec.family == "binary" else run_continuous
    return run(X, y, spec, rng, engine)


def effective_sample_size(x: np.ndarray) -> float:
    """Autocorrelation-based ESS of a scalar chain (Geyer initial positive sequence)."""
    x = np.asarray(x, dtype=float)
    n = x.size
    if n < 4 or np.var(x) == 0:
        return float(n)
    xc = x - x.mean()
    f = np.fft.rfft(xc, 2 * n)
    acf = np.fft.irfft(f * np.conj(f))[:n] / (n * np.var(x))
    s = 0.0
    for k in range(0, n - 1, 2):
        pair = acf[k] + acf[k + 1]
        if pair <= 0:
            break
        s += pair
    tau_int = max(2.0 * s - 1.0, 1.0)
    return float(n / tau_int)
