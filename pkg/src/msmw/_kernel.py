"""Compiled Gibbs sweep.

Mirrors the numpy path in :mod:`msmw.gibbs` step for step, including the
order in which random numbers are taken from the shared ``Generator``, so
the two engines produce the same chain up to floating-point rounding.
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit

from .truncnorm import TAIL_START

JITTER_FRACTION = 1e-8
STATUS_OK = 0
STATUS_JITTER = 1
STATUS_SINGULAR = 2


@njit(cache=True)
def _ndtr(x):
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


@njit(cache=True)
def _ndtri(p):
    """Inverse standard normal CDF, Wichura's AS241 (PPND16), ~1e-16 relative."""
    q = p - 0.5
    if abs(q) <= 0.425:
        r = 0.180625 - q * q
        num = (((((((r * 2509.0809287301226727 + 33430.575583588128105) * r
                    + 67265.770927008700853) * r + 45921.953931549871457) * r
                  + 13731.693765509461125) * r + 1971.5909503065514427) * r
                + 133.14166789178437745) * r + 3.387132872796366608)
        den = (((((((r * 5226.495278852545925 + 28729.085735721942674) * r
                    + 39307.89580009271061) * r + 21213.794301586595867) * r
                  + 5394.1960214247511077) * r + 687.1870074920579083) * r
                + 42.313330701600911252) * r + 1.0)
        return q * num / den
    r = p if q < 0 else 1.0 - p
    if r <= 0.0:
        return -math.inf if q < 0 else math.inf
    r = math.sqrt(-math.log(r))
    if r <= 5.0:
        r -= 1.6
        num = (((((((r * 7.7454501427834140764e-4 + 0.0227238449892691845833) * r
                    + 0.24178072517745061177) * r + 1.27045825245236838258) * r
                  + 3.64784832476320460504) * r + 5.7694972214606914055) * r
                + 4.6303378461565452959) * r + 1.42343711074968357734)
        den = (((((((r * 1.05075007164441684324e-9 + 5.475938084995344946e-4) * r
                    + 0.0151986665636164571966) * r + 0.14810397642748007459) * r
                  + 0.68976733498510000455) * r + 1.6763848301838038494) * r
                + 2.05319162663775882187) * r + 1.0)
    else:
        r -= 5.0
        num = (((((((r * 2.01033439929228813265e-7 + 2.71155556874348757815e-5) * r
                    + 0.0012426609473880784386) * r + 0.026532189526576123093) * r
                  + 0.29656057182850489123) * r + 1.7848265399172913358) * r
                + 5.4637849111641143699) * r + 6.6579046435011037772)
        den = (((((((r * 2.04426310338993978564e-15 + 1.4215117583164458887e-7) * r
                    + 1.8463183175100546818e-5) * r + 7.868691311456132591e-4) * r
                  + 0.0148753612908506148525) * r + 0.13692988092273580531) * r
                + 0.59983220655588793769) * r + 1.0)
    val = num / den
    return -val if q < 0 else val


@njit(cache=True)
def _chol(A):
    """Lower Cholesky factor with one jitter retry; returns (L, status)."""
    n = A.shape[0]
    try:
        return np.linalg.cholesky(A), STATUS_OK
    except Exception:
        pass
    jitter = 0.0
    for i in range(n):
        jitter += A[i, i]
    jitter *= JITTER_FRACTION / n
    B = A.copy()
    for i in range(n):
        B[i, i] += jitter
    try:
        return np.linalg.cholesky(B), STATUS_JITTER
    except Exception:
        return np.zeros((n, n)), STATUS_SINGULAR


@njit(cache=True)
def _forward(L, b):
    n = b.shape[0]
    x = np.empty(n)
    for i in range(n):
        s = b[i]
        for k in range(i):
            s -= L[i, k] * x[k]
        x[i] = s / L[i, i]
    return x


@njit(cache=True)
def _backward_t(L, b):
    """Solve L^T x = b."""
    n = b.shape[0]
    x = np.empty(n)
    for i in range(n - 1, -1, -1):
        s = b[i]
        for k in range(i + 1, n):
            s -= L[k, i] * x[k]
        x[i] = s / L[i, i]
    return x


@njit(cache=True)
def _gauss_draw(design, response, prior_var, sigma2, rng):
    n, p = design.shape
    if p <= n:
        A = design.T @ design
        for j in range(p):
            A[j, j] += sigma2 / prior_var[j]
        L, status = _chol(A)
        if status == STATUS_SINGULAR:
            return np.zeros(p), status
        mean = _backward_t(L, _forward(L, design.T @ response))
        eps = np.empty(p)
        for j in range(p):
            eps[j] = rng.standard_normal()
        return mean + math.sqrt(sigma2) * _backward_t(L, eps), status
    sd = math.sqrt(sigma2)
    Phi = design / sd
    u = np.empty(p)
    for j in range(p):
        u[j] = math.sqrt(prior_var[j]) * rng.standard_normal()
    delta = np.empty(n)
    for i in range(n):
        delta[i] = rng.standard_normal()
    DPt = np.empty((p, n))
    for j in range(p):
        for i in range(n):
            DPt[j, i] = prior_var[j] * Phi[i, j]
    M = Phi @ DPt
    for i in range(n):
        M[i, i] += 1.0
    L, status = _chol(M)
    if status == STATUS_SINGULAR:
        return np.zeros(p), status
    rhs = response / sd - (Phi @ u + delta)
    w = _backward_t(L, _forward(L, rhs))
    return u + DPt @ w, status


@njit(cache=True)
def _design_V(X, V):
    N, P, D = X.shape
    R = V.shape[1]
    out = np.zeros((N, R * P))
    for i in range(N):
        for r in range(R):
            for p in range(P):
                s = 0.0
                for d in range(D):
                    s += X[i, p, d] * V[d, r]
                out[i, r * P + p] = s
    return out


@njit(cache=True)
def _design_W(X, W):
    N, P, D = X.shape
    R = W.shape[1]
    out = np.zeros((N, R * D))
    for i in range(N):
        for r in range(R):
            for d in range(D):
                s = 0.0
                for p in range(P):
                    s += X[i, p, d] * W[p, r]
                out[i, r * D + d] = s
    return out


@njit(cache=True)
def _scores(X, B):
    N, P, D = X.shape
    out = np.zeros(N)
    for i in range(N):
        s = 0.0
        for p in range(P):
            for d in range(D):
                s += X[i, p, d] * B[p, d]
        out[i] = s
    return out


@njit(cache=True)
def _normal_above(a, rng):
    n = a.shape[0]
    u = np.empty(n)
    for i in range(n):
        u[i] = 1.0 - rng.random()
    out = np.empty(n)
    k = 0
    for i in range(n):
        if a[i] < TAIL_START:
            out[i] = -_ndtri(u[i] * _ndtr(-a[i]))
        else:
            k += 1
    if k == 0:
        return out
    todo = np.empty(k, dtype=np.int64)
    j = 0
    for i in range(n):
        if not a[i] < TAIL_START:
            todo[j] = i
            j += 1
    while todo.shape[0] > 0:
        m = todo.shape[0]
        x = np.empty(m)
        for j in range(m):
            ai = a[todo[j]]
            lam = 0.5 * (ai + math.sqrt(ai * ai + 4.0))
            x[j] = ai + rng.standard_exponential() / lam
        keep = np.ones(m, dtype=np.bool_)
        nleft = 0
        for j in range(m):
            ai = a[todo[j]]
            lam = 0.5 * (ai + math.sqrt(ai * ai + 4.0))
            if rng.random() <= math.exp(-0.5 * (x[j] - lam) ** 2):
                out[todo[j]] = x[j]
                keep[j] = False
            else:
                nleft += 1
        rest = np.empty(nleft, dtype=np.int64)
        j2 = 0
        for j in range(m):
            if keep[j]:
                rest[j2] = todo[j]
                j2 += 1
        todo = rest
    return out


@njit(cache=True)
def _draw_tau(coef, labels, n_groups, alpha0, beta0, rng):
    ss = np.zeros(n_groups)
    cnt = np.zeros(n_groups)
    P, C = coef.shape
    for p in range(P):
        g = labels[p]
        for c in range(C):
            ss[g] += coef[p, c] * coef[p, c]
            cnt[g] += 1.0
    out = np.empty(n_groups)
    for g in range(n_groups):
        out[g] = (beta0[g] + 0.5 * ss[g]) / rng.gamma(alpha0[g] + 0.5 * cnt[g])
    return out


@njit(cache=True)
def run_kernel(X, flat, y, binary, rank, labels, n_groups, alpha0, beta0,
               tau, W, V, sigma2, z, s2_alpha, s2_beta,
               update_tau, update_sigma2, T, burn, rng):
    """Returns (B draws, tau draws, sigma2 draws, status, failing iteration, jitter count)."""
    N, P, D = X.shape
    keep = T - burn
    B_out = np.empty((keep, P, D))
    tau_out = np.empty((keep, n_groups))
    s2_out = np.empty(keep)
    B = np.zeros((P, D))
    jitters = 0
    for t in range(T):
        target = z if binary else y
        if rank == 0:
            pv = np.empty(P * D)
            for d in range(D):
                for p in range(P):
                    pv[d * P + p] = tau[labels[p]]
            b, st = _gauss_draw(flat, target, pv, sigma2, rng)
            if st == STATUS_SINGULAR:
                return B_out, tau_out, s2_out, st, t + 1, jitters
            jitters += st
            for d in range(D):
                for p in range(P):
                    B[p, d] = b[d * P + p]
            coef = B
        else:
            R = rank
            v, st = _gauss_draw(_design_W(X, W), target, np.ones(R * D), sigma2, rng)
            if st == STATUS_SINGULAR:
                return B_out, tau_out, s2_out, st, t + 1, jitters
            jitters += st
            for r in range(R):
                for d in range(D):
                    V[d, r] = v[r * D + d]
            pv = np.empty(R * P)
            for r in range(R):
                for p in range(P):
                    pv[r * P + p] = tau[labels[p]]
            w, st = _gauss_draw(_design_V(X, V), target, pv, sigma2, rng)
            if st == STATUS_SINGULAR:
                return B_out, tau_out, s2_out, st, t + 1, jitters
            jitters += st
            for r in range(R):
                for p in range(P):
                    W[p, r] = w[r * P + p]
            B = W @ V.T
            coef = W
        if update_tau:
            tau = _draw_tau(coef, labels, n_groups, alpha0, beta0, rng)
        if update_sigma2 or binary:
            mu = _scores(X, B)
        if update_sigma2:
            rss = 0.0
            for i in range(N):
                rss += (y[i] - mu[i]) ** 2
            sigma2 = (s2_beta + 0.5 * rss) / rng.gamma(s2_alpha + 0.5 * N)
        if binary:
            a = np.empty(N)
            for i in range(N):
                a[i] = -mu[i] if y[i] == 1.0 else mu[i]
            e = _normal_above(a, rng)
            for i in range(N):
                z[i] = mu[i] + e[i] if y[i] == 1.0 else mu[i] - e[i]
        if t >= burn:
            k = t - burn
            B_out[k] = B
            tau_out[k] = tau
            s2_out[k] = sigma2
    return B_out, tau_out, s2_out, STATUS_OK, 0, jitters
