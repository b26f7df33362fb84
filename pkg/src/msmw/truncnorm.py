"""Exact sampling from unit-variance normals restricted to a half-line."""
from __future__ import annotations

import numpy as np
from scipy.special import ndtr, ndtri

# Above this standardized bound the exponential-proposal sampler takes over.
TAIL_START = 3.0


def _tail_rejection(a: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Robert (1995) translated-exponential rejection for ``Z | Z > a``, ``a > 0``."""
    lam = 0.5 * (a + np.sqrt(a * a + 4.0))
    out = np.empty_like(a)
    todo = np.arange(a.size)
    while todo.size:
        x = a[todo] + rng.standard_exponential(todo.size) / lam[todo]
        u = rng.random(todo.size)
        ok = u <= np.exp(-0.5 * (x - lam[todo]) ** 2)
        out[todo[ok]] = x[ok]
        todo = todo[~ok]
    return out


def standard_normal_above(a, rng: np.random.Generator) -> np.ndarray:
    """Draw ``Z ~ N(0, 1)`` conditioned on ``Z > a``, elementwise.

    Uses the inverse CDF on the upper-tail probability, which keeps full
    relative precision for any ``a`` below :data:`TAIL_START`, and rejection
    sampling beyond it.
    """
    a = np.atleast_1d(np.asarray(a, dtype=float))
    u = 1.0 - rng.random(a.shape)  # (0, 1], keeps ndtri finite
    out = np.empty_like(a)
    bulk = a < TAIL_START
    # P(Z > t) = ndtr(-t); invert u * P(Z > a) on the upper tail
    out[bulk] = -ndtri(u[bulk] * ndtr(-a[bulk]))
    tail = ~bulk
    if np.any(tail):
        out[tail] = _tail_rejection(a[tail], rng)
    return out


def sample_truncated_normal(mean, lower=None, upper=None, rng=None, size=None):
    """Exact draws from ``Normal(mean, 1)`` restricted to ``(lower, inf)`` or
    ``(-inf, upper)``. Exactly one bound must be given."""
    if (lower is None) == (upper is None):
        raise ValueError("exactly one of lower/upper must be set")
    rng = rng if rng is not None else np.random.default_rng()
    mean = np.asarray(mean, dtype=float)
    if size is not None:
        mean = np.broadcast_to(mean, size)
    if lower is not None:
        a = np.broadcast_to(np.asarray(lower, dtype=float) - mean, mean.shape)
        draw = mean + standard_normal_above(a, rng).reshape(mean.shape)
    else:
        a = np.broadcast_to(mean - np.asarray(upper, dtype=float), mean.shape)
        draw = mean - standard_normal_above(a, rng).reshape(mean.shape)
    return draw if draw.ndim else float(draw)

