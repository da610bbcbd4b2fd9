"""Empirical-likelihood machinery for the double exponential tilting model.

All functions work on the pooled rows of a :class:`~pudetm.core.Dataset`
(source rows first). Tilts ``g_t(x) = alpha_t + x @ beta_t`` enter the
Lagrange denominators ``D_i = 1 + sum_t lambda_t (exp(g_t) - 1)``, which
are evaluated after dividing each row by ``exp(max(0, g_1, g_2))`` so that
tilts up to about 700 never overflow.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .core import Dataset, Theta
from .errors import DomainError, FeasibilityError, NonConvergenceError, SingularMatrixError
from .numerics import NewtonOptions, damped_newton

LAGRANGE_TOL = 1e-10
_LAGRANGE_NEWTON = NewtonOptions(max_iter=200, grad_tol=LAGRANGE_TOL, step_halving_max=60)


@dataclass(frozen=True)
class LagrangePair:
    """Solution of the two Lagrange equations.

    ``rank`` is the rank of the system: 2 normally, 1 when the two tilts are
    linearly dependent on the data (e.g. the single-tilt model, where
    component 1 is identically one), 0 when both tilts are identically one.
    Directions the equations do not determine keep the value of the
    starting point ``(c pi, c (1 - pi))``, or 0 in the fully degenerate case.
    """

    lambda1: float
    lambda2: float
    rank: int = 2

    @property
    def degenerate(self) -> bool:
        return self.rank == 0

    def as_array(self) -> np.ndarray:
        return np.array([self.lambda1, self.lambda2])


def tilts(ds: Dataset, theta: Theta):
    """Log density ratios ``g_1, g_2`` on all pooled rows."""
    x = ds.pooled
    return theta.alpha1 + x @ theta.beta1, theta.alpha2 + x @ theta.beta2


def _scaled_u(g, mx, s):
    # (exp(g) - 1) * exp(-mx) without overflow or cancellation
    small = g <= 30.0
    out = np.empty_like(g)
    out[small] = s[small] * np.expm1(g[small])
    big = ~small
    out[big] = np.exp(g[big] - mx[big]) - s[big]
    return out


@dataclass(frozen=True)
class _Scaled:
    u1: np.ndarray
    u2: np.ndarray
    s: np.ndarray
    mx: np.ndarray
    mx_sum: float


def _scaled_terms(g1, g2) -> _Scaled:
    mx = np.maximum(0.0, np.maximum(g1, g2))
    s = np.exp(-mx)
    return _Scaled(_scaled_u(g1, mx, s), _scaled_u(g2, mx, s), s, mx, float(mx.sum()))


def _system_rank(u1, u2):
    n1 = float(np.max(np.abs(u1)))
    n2 = float(np.max(np.abs(u2)))
    if n1 == 0.0 and n2 == 0.0:
        return 0, None
    U = np.column_stack([u1, u2])
    _, sv, vt = np.linalg.svd(U, full_matrices=False)
    if sv[1] <= 1e-12 * sv[0]:
        return 1, vt[0]
    return 2, None


def _lagrange_objective(sc: _Scaled, base, direction=None):
    if direction is None:
        def obj(lam):
            val, g1, g2, h11, h12, h22, dmin = kernels.lagrange_terms(
                sc.u1, sc.u2, sc.s, lam[0], lam[1])
            if dmin <= 0.0:
                return -np.inf, None, None
            return val, np.array([g1, g2]), np.array([[h11, h12], [h12, h22]])
        return obj
    w = direction[0] * sc.u1 + direction[1] * sc.u2
    zero = np.zeros_like(w)
    base_d = base

    def obj1(t):
        val, g1, _, h11, _, _, dmin = kernels.lagrange_terms(w, zero, sc.s + base_d, t[0], 0.0)
        if dmin <= 0.0:
            return -np.inf, None, None
        return val, np.array([g1]), np.array([[h11]])
    return obj1


def _solve_scaled(sc: _Scaled, start) -> LagrangePair:
    rank, v = _system_rank(sc.u1, sc.u2)
    if rank == 0:
        return LagrangePair(0.0, 0.0, 0)
    start = np.asarray(start, dtype=float)
    if rank == 1:
        # components of lambda orthogonal to v do not move any denominator
        t0 = float(start @ v)
        null_part = start - t0 * v
        starts = [t0, 0.0]
        obj = _lagrange_objective(sc, 0.0, v)
    else:
        starts = [start, np.zeros(2)]
        obj = _lagrange_objective(sc, None)
    last_exc = None
    for x0 in starts:
        x0 = np.atleast_1d(np.asarray(x0, dtype=float))
        if not np.isfinite(obj(x0)[0]):
            continue
        try:
            res = damped_newton(obj, x0, _LAGRANGE_NEWTON)
        except (NonConvergenceError, SingularMatrixError) as exc:
            last_exc = exc
            continue
        if rank == 1:
            lam = null_part + res.x[0] * v
            return LagrangePair(float(lam[0]), float(lam[1]), 1)
        return LagrangePair(float(res.x[0]), float(res.x[1]), 2)
    raise FeasibilityError(
        "Lagrange equations have no interior solution for this theta "
        "(zero is not inside the convex hull of the tilt contrasts)"
        + (f": {last_exc}" if last_exc else ""))


def natural_start(ds: Dataset, theta: Theta):
    return np.array([ds.c * theta.pi, ds.c * (1.0 - theta.pi)])


def solve_lagrange(ds: Dataset, theta: Theta, start=None) -> LagrangePair:
    """Solve the Lagrange equations ``sum_i (e^{g_t} - 1) / D_i = 0``.

    Newton's method maximizes the concave function ``sum_i log D_i`` over
    the region where every ``D_i > 0``, starting from ``(c pi, c (1-pi))``
    with ``c = m / N`` and falling back to ``(0, 0)``.

    Raises
    ------
    FeasibilityError
        No interior solution exists (or Newton could not find one).
    """
    g1, g2 = tilts(ds, theta)
    sc = _scaled_terms(g1, g2)
    return _solve_scaled(sc, natural_start(ds, theta) if start is None else start)


def lagrange_residual(ds: Dataset, theta: Theta, lam: LagrangePair) -> np.ndarray:
    g1, g2 = tilts(ds, theta)
    sc = _scaled_terms(g1, g2)
    d = sc.s + lam.lambda1 * sc.u1 + lam.lambda2 * sc.u2
    return np.array([np.sum(sc.u1 / d), np.sum(sc.u2 / d)])


def _denominators(sc: _Scaled, lam: LagrangePair):
    d = sc.s + lam.lambda1 * sc.u1 + lam.lambda2 * sc.u2
    if np.any(d <= 0.0):
        i = int(np.argmin(d))
        raise FeasibilityError(f"non-positive Lagrange denominator at row {i}")
    return d


def el_weights(ds: Dataset, theta: Theta, lam: LagrangePair) -> np.ndarray:
    """Point masses ``p_i = 1 / (N D_i)``."""
    g1, g2 = tilts(ds, theta)
    sc = _scaled_terms(g1, g2)
    d = _denominators(sc, lam)
    return sc.s / (ds.N * d)


def mixture_log_sum(ds: Dataset, theta: Theta) -> float:
    """``sum_j log(pi e^{g_1} + (1 - pi) e^{g_2})`` over the target rows."""
    x = ds.target_x
    g1 = theta.alpha1 + x @ theta.beta1
    g2 = theta.alpha2 + x @ theta.beta2
    total, _ = kernels.mixture_terms(g1, g2, math.log(theta.pi), math.log1p(-theta.pi))
    return total


def profile_log_el(ds: Dataset, theta: Theta, lam: LagrangePair = None) -> float:
    """Profile log-EL ``l_N(theta)`` with the point masses maximized out.

    Equals the log-EL plus ``N log N``, so it is at most ``N log N``.
    """
    return profile_with_multipliers(ds, theta, lam)[0]


def profile_with_multipliers(ds: Dataset, theta: Theta, lam: LagrangePair = None):
    """``(l_N(theta), LagrangePair)``; solves for the multipliers unless given."""
    g1, g2 = tilts(ds, theta)
    sc = _scaled_terms(g1, g2)
    if lam is None:
        lam = _solve_scaled(sc, natural_start(ds, theta))
    d = _denominators(sc, lam)
    log_d = sc.mx_sum + float(np.log(d).sum())
    return -log_d + mixture_log_sum(ds, theta), lam


def log_el(ds: Dataset, theta: Theta, weights) -> float:
    """Log-EL ``sum_i log p_i + sum_j log(pi e^{g_1} + (1-pi) e^{g_2})``."""
    w = np.asarray(weights, dtype=float)
    if w.shape != (ds.N,):
        raise DomainError(f"expected {ds.N} weights, got shape {w.shape}")
    with np.errstate(divide="ignore"):
        return float(np.log(w).sum()) + mixture_log_sum(ds, theta)


def constraint_residuals(ds: Dataset, theta: Theta, weights) -> np.ndarray:
    """``(sum p_i - 1, sum p_i e^{g_1} - 1, sum p_i e^{g_2} - 1)``."""
    g1, g2 = tilts(ds, theta)
    w = np.asarray(weights, dtype=float)
    return np.array([w.sum() - 1.0, w @ np.exp(g1) - 1.0, w @ np.exp(g2) - 1.0])


# ---------------------------------------------------------------------------
# complete-data objective of the M-step


def class_weights(ds: Dataset, omega):
    """Row weights of classes 1 and 2 in the three-class multinomial form."""
    omega = np.asarray(omega, dtype=float)
    if omega.shape != (ds.m,):
        raise DomainError(f"expected {ds.m} target weights, got shape {omega.shape}")
    if np.any((omega < 0.0) | (omega > 1.0)) or not np.all(np.isfinite(omega)):
        raise DomainError("omega entries must lie in [0, 1]")
    w1 = np.zeros(ds.N)
    w2 = np.zeros(ds.N)
    w1[ds.n:] = omega
    w2[ds.n:] = 1.0 - omega
    return w1, w2


def q_objective(ds: Dataset, omega, alpha1s: float, alpha2s: float, beta1, beta2,
                want_hess: bool = True):
    """Complete-data M-step objective and its exact derivatives.

    ``-sum_i log(1 + e^{a1 + x b1} + e^{a2 + x b2})
    + sum_j [w_j (a1 + x_j b1) + (1 - w_j)(a2 + x_j b2)]``, a weighted
    three-class multinomial logistic log-likelihood (source rows in the
    baseline class). Derivatives are ordered ``(a1, b1, a2, b2)``.
    """
    w1, w2 = class_weights(ds, omega)
    b1 = np.concatenate([[alpha1s], np.asarray(beta1, dtype=float)])
    b2 = np.concatenate([[alpha2s], np.asarray(beta2, dtype=float)])
    return kernels.multinomial_terms(ds.design, b1, b2, w1, w2, want_hess)
