"""Small numerical kernels: SPD solves, damped Newton ascent and chi-square
tail probabilities.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Tuple

import numpy as np
import scipy.optimize
from scipy.linalg import lapack

from .errors import DomainError, NonConvergenceError, SingularMatrixError

_EPS = np.finfo(float).eps
_TINY = 1e-300


def solve_spd(A, b) -> np.ndarray:
    """Solve ``A x = b`` for symmetric positive definite ``A`` by Cholesky.

    Raises
    ------
    SingularMatrixError
        If the factorization breaks down; ``pivot`` is the 0-based index of
        the first non-positive pivot.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DomainError(f"A must be square, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise SingularMatrixError("matrix has non-finite entries", pivot=None)
    c, info = lapack.dpotrf(A, lower=1, clean=1)
    if info > 0:
        raise SingularMatrixError(
            f"matrix is not positive definite (pivot {info - 1})", pivot=info - 1)
    if info < 0:
        raise DomainError(f"invalid argument {-info} to dpotrf")
    x, info = lapack.dpotrs(c, b, lower=1)
    if info != 0:
        raise SingularMatrixError("triangular solve failed", pivot=None)
    return x


# ---------------------------------------------------------------------------
# regularized incomplete gamma and chi-square tails


def _gamma_series(a, x):
    # lower regularized P(a, x), valid for x < a + 1
    term = 1.0 / a
    total = term
    ap = a
    for _ in range(100000):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * 1e-17:
            break
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _gamma_cont_frac(a, x):
    # upper regularized Q(a, x) by modified Lentz, valid for x >= a + 1
    b = x + 1.0 - a
    c = 1.0 / _TINY
    d = 1.0 / b
    h = d
    for i in range(1, 100000):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < _TINY:
            d = _TINY
        c = b + an / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-16:
            break
    return math.exp(-x + a * math.log(x) - math.lgamma(a)) * h


def regularized_gamma(a: float, x: float) -> Tuple[float, float]:
    """Return ``(P(a, x), Q(a, x))``, the lower and upper regularized
    incomplete gamma functions."""
    if a <= 0:
        raise DomainError("a must be positive")
    if x < 0 or math.isnan(x):
        raise DomainError("x must be non-negative")
    if x == 0.0:
        return 0.0, 1.0
    if math.isinf(x):
        return 1.0, 0.0
    if x < a + 1.0:
        p = min(_gamma_series(a, x), 1.0)
        return p, 1.0 - p
    q = min(_gamma_cont_frac(a, x), 1.0)
    return 1.0 - q, q


def _check_df(df):
    if int(df) != df or df < 1:
        raise DomainError(f"degrees of freedom must be a positive integer, got {df!r}")


def chi2_sf(x: float, df: int) -> float:
    """Chi-square survival function ``1 - F(x)``."""
    _check_df(df)
    if x < 0:
        raise DomainError("chi-square statistic must be non-negative")
    return regularized_gamma(0.5 * df, 0.5 * float(x))[1]


def chi2_cdf(x: float, df: int) -> float:
    _check_df(df)
    if x < 0:
        raise DomainError("chi-square statistic must be non-negative")
    return regularized_gamma(0.5 * df, 0.5 * float(x))[0]


def chi2_quantile(q: float, df: int) -> float:
    """Inverse of :func:`chi2_cdf`, found by a bracketed root search on the
    survival function."""
    _check_df(df)
    if not (0.0 < q < 1.0):
        raise DomainError(f"quantile level must lie in (0, 1), got {q!r}")
    target = 1.0 - q
    hi = max(1.0, float(df))
    while chi2_sf(hi, df) > target:
        hi *= 2.0
    return scipy.optimize.brentq(lambda x: chi2_sf(x, df) - target, 0.0, hi,
                                 xtol=1e-14, rtol=4 * _EPS, maxiter=500)


# ---------------------------------------------------------------------------
# damped Newton


@dataclass(frozen=True)
class NewtonOptions:
    max_iter: int = 100
    grad_tol: float = 1e-10
    step_halving_max: int = 30
    # a converged point must also have a small Newton step, which rules out
    # runaway iterates whose gradient decays towards zero (separable data)
    step_tol: float = 1e-6

    def __post_init__(self):
        if self.max_iter < 1:
            raise DomainError("max_iter must be >= 1")
        if not self.grad_tol > 0:
            raise DomainError("grad_tol must be positive")


@dataclass(frozen=True)
class NewtonResult:
    x: np.ndarray
    value: float
    grad: np.ndarray
    hess: np.ndarray
    n_iter: int


def newton_direction(hess, grad) -> np.ndarray:
    """Ascent direction ``(-H)^{-1} g``, retrying once with a ``1e-10 I`` ridge."""
    neg = -np.asarray(hess, dtype=float)
    try:
        return solve_spd(neg, grad)
    except SingularMatrixError:
        return solve_spd(neg + 1e-10 * np.eye(neg.shape[0]), grad)


Objective = Callable[[np.ndarray], Tuple[float, np.ndarray, np.ndarray]]


def damped_newton(objective: Objective, x0, opts: NewtonOptions = NewtonOptions()) -> NewtonResult:
    """Maximize a smooth concave-ish objective by Newton steps with step halving.

    ``objective(x)`` returns ``(value, gradient, hessian)``; it may return a
    non-finite value outside its feasible domain, which makes the line
    search halve the step. A step is accepted only if the objective does not
    decrease; when the change sits at floating-point noise level the step is
    judged by the gradient norm instead.

    Raises
    ------
    NonConvergenceError
        ``max_iter`` exhausted or the line search failed; carries the last
        iterate.
    SingularMatrixError
        The Hessian could not be factorized even after the ridge retry.
    """
    x = np.array(x0, dtype=float)
    f, g, H = objective(x)
    if not np.isfinite(f):
        raise DomainError("starting point is outside the feasible domain")
    prev_gnorm = np.inf
    for it in range(opts.max_iter + 1):
        gnorm = float(np.max(np.abs(g))) if g.size else 0.0
        d = newton_direction(H, g)
        step_small = float(np.max(np.abs(d))) <= opts.step_tol * (1.0 + float(np.max(np.abs(x))))
        noise = 1e3 * _EPS * (1.0 + abs(f))
        # the predicted gain sits at rounding level and the last step no longer
        # shrank the gradient: the gradient is as small as the sums allow
        at_floor = float(g @ d) <= noise and gnorm > 0.5 * prev_gnorm
        if step_small and (gnorm <= opts.grad_tol or at_floor):
            return NewtonResult(x, f, g, H, it)
        if it == opts.max_iter:
            break
        t = 1.0
        for _ in range(opts.step_halving_max + 1):
            xn = x + t * d
            fn, gn, Hn = objective(xn)
            if np.isfinite(fn):
                if fn >= f:
                    break
                if fn >= f - noise and np.max(np.abs(gn)) < gnorm:
                    break
            t *= 0.5
        else:
            raise NonConvergenceError(
                f"step halving failed at iteration {it} (gradient norm {gnorm:.3g})",
                last_iterate=x, details={"grad_norm": gnorm, "iteration": it})
        x, f, g, H = xn, fn, gn, Hn
        prev_gnorm = gnorm
    raise NonConvergenceError(
        f"no convergence within {opts.max_iter} Newton iterations "
        f"(gradient norm {float(np.max(np.abs(g))):.3g})",
        last_iterate=x, details={"grad_norm": float(np.max(np.abs(g)))})
