"""Numba-compiled versions of the hot kernels.

Each function fuses what the numpy backend does with several temporaries
into one pass over the rows. Signatures and return values match
:mod:`pudetm.kernels._numpy` exactly.
"""

import math

import numpy as np
from numba import njit

_jit = njit(cache=True, nogil=True, fastmath=False)


@_jit
def _lagrange_terms(u1, u2, s, lam1, lam2):
    n = u1.shape[0]
    dmin = np.inf
    for i in range(n):
        d = s[i] + lam1 * u1[i] + lam2 * u2[i]
        if d < dmin:
            dmin = d
    if dmin <= 0.0:
        return -np.inf, 0.0, 0.0, 0.0, 0.0, 0.0, dmin
    val = 0.0
    g1 = 0.0
    g2 = 0.0
    h11 = 0.0
    h12 = 0.0
    h22 = 0.0
    for i in range(n):
        d = s[i] + lam1 * u1[i] + lam2 * u2[i]
        r1 = u1[i] / d
        r2 = u2[i] / d
        val += math.log(d)
        g1 += r1
        g2 += r2
        h11 -= r1 * r1
        h12 -= r1 * r2
        h22 -= r2 * r2
    return val, g1, g2, h11, h12, h22, dmin


def lagrange_terms(u1, u2, s, lam1, lam2):
    return _lagrange_terms(u1, u2, s, float(lam1), float(lam2))


@_jit
def _multinomial_rows(Q, b1, b2, w1, w2):
    # fused pass: predictors, softmax, value and per-row residuals/curvatures
    n, k = Q.shape
    r = np.empty((n, 2))
    c = np.empty((n, 3))
    value = 0.0
    for i in range(n):
        e1 = 0.0
        e2 = 0.0
        for j in range(k):
            e1 += Q[i, j] * b1[j]
            e2 += Q[i, j] * b2[j]
        mx = max(0.0, max(e1, e2))
        z0 = math.exp(-mx)
        z1 = math.exp(e1 - mx)
        z2 = math.exp(e2 - mx)
        tot = z0 + z1 + z2
        value += w1[i] * e1 + w2[i] * e2 - (mx + math.log(tot))
        s1 = z1 / tot
        s2 = z2 / tot
        r[i, 0] = w1[i] - s1
        r[i, 1] = w2[i] - s2
        c[i, 0] = s1 * (1.0 - s1)
        c[i, 1] = s2 * (1.0 - s2)
        c[i, 2] = s1 * s2
    return value, r, c


@_jit
def _weighted_gram(Q, w):
    n, k = Q.shape
    A = np.empty((n, k))
    for i in range(n):
        sw = math.sqrt(w[i])
        for j in range(k):
            A[i, j] = Q[i, j] * sw
    return np.dot(A.T, A)


@_jit
def _multinomial_terms(Q, b1, b2, w1, w2, want_hess):
    n, k = Q.shape
    value, r, c = _multinomial_rows(Q, b1, b2, w1, w2)
    grad = np.dot(Q.T, r).T.copy().reshape(2 * k)
    hess = np.zeros((2 * k, 2 * k))
    if want_hess:
        h11 = _weighted_gram(Q, c[:, 0].copy())
        h22 = _weighted_gram(Q, c[:, 1].copy())
        h12 = _weighted_gram(Q, c[:, 2].copy())
        for a in range(k):
            for b in range(k):
                hess[a, b] = -h11[a, b]
                hess[k + a, k + b] = -h22[a, b]
                hess[a, k + b] = h12[a, b]
                hess[k + b, a] = h12[a, b]
    return value, grad, hess


def multinomial_terms(Q, b1, b2, w1, w2, want_hess=True):
    value, grad, hess = _multinomial_terms(
        np.ascontiguousarray(Q), np.ascontiguousarray(b1, dtype=np.float64),
        np.ascontiguousarray(b2, dtype=np.float64), w1, w2, bool(want_hess))
    return value, grad, (hess if want_hess else None)


@_jit
def _mixture_terms(g1, g2, log_pi, log_1mpi):
    n = g1.shape[0]
    omega = np.empty(n)
    total = 0.0
    for i in range(n):
        a = log_pi + g1[i]
        b = log_1mpi + g2[i]
        if a >= b:
            t = math.exp(b - a)
            total += a + math.log1p(t)
            omega[i] = 1.0 / (1.0 + t)
        else:
            t = math.exp(a - b)
            total += b + math.log1p(t)
            omega[i] = t / (1.0 + t)
    return total, omega


def mixture_terms(g1, g2, log_pi, log_1mpi):
    return _mixture_terms(g1, g2, float(log_pi), float(log_1mpi))
