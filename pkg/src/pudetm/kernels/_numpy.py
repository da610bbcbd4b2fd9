"""Pure-numpy versions of the hot kernels."""

import numpy as np
from scipy.special import expit


def lagrange_terms(u1, u2, s, lam1, lam2):
    """Sum of ``log D`` and its first two derivatives in ``(lam1, lam2)``.

    ``D_i = s_i + lam1 * u1_i + lam2 * u2_i`` is a row-wise rescaled
    Lagrange denominator. Returns ``(value, g1, g2, h11, h12, h22, dmin)``;
    value and derivatives are meaningless when ``dmin <= 0``.
    """
    d = s + lam1 * u1 + lam2 * u2
    dmin = float(d.min())
    if dmin <= 0.0:
        return -np.inf, 0.0, 0.0, 0.0, 0.0, 0.0, dmin
    r1 = u1 / d
    r2 = u2 / d
    return (float(np.log(d).sum()), float(r1.sum()), float(r2.sum()),
            -float(r1 @ r1), -float(r1 @ r2), -float(r2 @ r2), dmin)


def multinomial_terms(Q, b1, b2, w1, w2, want_hess=True):
    """Weighted three-class multinomial logistic log-likelihood.

    Class 0 is the baseline with linear predictor 0; classes 1 and 2 have
    predictors ``Q @ b1`` and ``Q @ b2`` and row weights ``w1``, ``w2``
    (class-0 weight is ``1 - w1 - w2``). Returns ``(value, grad, hess)`` with
    parameters ordered ``(b1, b2)``.
    """
    e1 = Q @ b1
    e2 = Q @ b2
    mx = np.maximum(0.0, np.maximum(e1, e2))
    z0 = np.exp(-mx)
    z1 = np.exp(e1 - mx)
    z2 = np.exp(e2 - mx)
    tot = z0 + z1 + z2
    lse = mx + np.log(tot)
    value = float(w1 @ e1 + w2 @ e2 - lse.sum())
    s1 = z1 / tot
    s2 = z2 / tot
    k = Q.shape[1]
    grad = np.empty(2 * k)
    grad[:k] = Q.T @ (w1 - s1)
    grad[k:] = Q.T @ (w2 - s2)
    if not want_hess:
        return value, grad, None
    hess = np.empty((2 * k, 2 * k))
    hess[:k, :k] = -(Q.T @ (Q * (s1 * (1.0 - s1))[:, None]))
    hess[k:, k:] = -(Q.T @ (Q * (s2 * (1.0 - s2))[:, None]))
    off = Q.T @ (Q * (s1 * s2)[:, None])
    hess[:k, k:] = off
    hess[k:, :k] = off.T
    return value, grad, hess


def mixture_terms(g1, g2, log_pi, log_1mpi):
    """Sum over rows of ``log(pi e^g1 + (1-pi) e^g2)`` and the posterior
    weight of component 1 on each row."""
    a = log_pi + g1
    b = log_1mpi + g2
    total = float(np.logaddexp(a, b).sum())
    omega = expit(a - b)
    return total, omega
