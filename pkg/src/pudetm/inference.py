"""Empirical likelihood ratio inference.

Covers the goodness-of-fit test of the single-tilt (SCAR) model against
the two-tilt model, the fixed-``pi`` likelihood ratio, confidence intervals
for ``pi`` by inverting it, and a sandwich covariance for all parameters.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .core import Dataset, FitResult, Model, Theta
from .errors import DomainError, NumericalError, RankError
from .estimation import DETM, SETM, FitOptions, ModelSpec, fit
from .likelihood import _scaled_terms, solve_lagrange
from .numerics import chi2_quantile, chi2_sf

log = logging.getLogger(__name__)

# ELR values in [-NEG_SLACK, 0) are optimizer noise and are reported as 0
NEG_SLACK = 1e-8
PI_DOMAIN = (1e-4, 1.0 - 1e-4)
CI_STEP = 0.01
CI_VALUE_TOL = 1e-3


@dataclass(frozen=True, eq=False)
class TestResult:
    """Likelihood ratio test of the single-tilt model inside the two-tilt model."""

    __test__ = False  # keep pytest from collecting this class

    statistic: float
    df: int
    p_value: float
    reject_at_0_05: bool
    fit_full: FitResult
    fit_null: FitResult
    refit: bool = False

    @property
    def decision(self) -> str:
        return "reject" if self.reject_at_0_05 else "retain"


@dataclass(frozen=True, eq=False)
class ConfidenceInterval:
    """Likelihood-ratio confidence interval for the mixture share.

    ``lower_open`` / ``upper_open`` flag an end where the statistic never
    reached the critical value inside the search domain; that end is then
    the domain boundary.
    """

    lower: float
    upper: float
    level: float
    pi_hat: float
    critical_value: float
    lower_open: bool = False
    upper_open: bool = False
    curve: Optional[List[Tuple[float, float]]] = None
    n_fits: int = 0
    fit: Optional[FitResult] = None

    def contains(self, pi: float) -> bool:
        return self.lower <= pi <= self.upper

    @property
    def width(self) -> float:
        return self.upper - self.lower


@dataclass(frozen=True, eq=False)
class CovarianceEstimate:
    """Sandwich covariance ``W^-1 V W^-1`` of ``sqrt(N)`` times the estimation error.

    Parameters are ordered ``(lambda1, lambda2, alpha1, alpha2, beta1, beta2, pi)``.
    """

    sigma: np.ndarray
    v_hat: np.ndarray
    w_hat: np.ndarray
    names: tuple
    N: int
    method: str = "numerical"

    def std_errors(self) -> np.ndarray:
        """Standard errors of the estimates themselves (``sqrt(diag(sigma) / N)``)."""
        return np.sqrt(np.maximum(np.diag(self.sigma), 0.0) / self.N)

    def std_error(self, name: str) -> float:
        return float(self.std_errors()[self.names.index(name)])


def _clamp_elr(value: float, what: str) -> float:
    if value >= 0.0:
        return value
    if value >= -NEG_SLACK:
        return 0.0
    raise NumericalError(
        f"{what} is {value:.3g} < 0: the restricted fit beat the unrestricted one, "
        "so a multistart missed the global maximum")


def _spec_of(fr: FitResult) -> ModelSpec:
    return SETM if fr.model in (Model.SETM, Model.SETM_FIXED_PI) else DETM


def _setm_projection(theta: Theta) -> Theta:
    z = np.zeros(theta.p)
    return Theta(0.0, theta.alpha2, z, theta.beta2, theta.pi)


def gof_test_scar(ds: Dataset, opts: FitOptions = FitOptions(),
                  full: Optional[FitResult] = None) -> TestResult:
    """Test ``alpha1 = 0, beta1 = 0`` (single tilt, SCAR) against the two-tilt model.

    The statistic ``2 (l_N(two-tilt) - l_N(single-tilt))`` is referred to a
    chi-square with ``p`` degrees of freedom. The single-tilt fit gets the
    projections of the two-tilt estimate (both orientations) as extra
    starts. If the single-tilt fit still ends higher, the two-tilt fit is
    rerun from it, since the nesting guarantees the larger model can reach
    at least that value.
    """
    try:
        if full is None:
            full = fit(ds, DETM, opts)
    except NumericalError as exc:
        raise type(exc)(f"two-tilt fit failed: {exc}") from exc
    warm = [_setm_projection(full.theta), _setm_projection(full.theta.switched())]
    try:
        null = fit(ds, SETM, opts, warm_starts=warm)
    except NumericalError as exc:
        raise type(exc)(f"single-tilt fit failed: {exc}") from exc
    refit = False
    if null.profile_log_el > full.profile_log_el + NEG_SLACK:
        refit = True
        full2 = fit(ds, DETM, opts, warm_starts=[null.theta], include_default_starts=False)
        if full2.profile_log_el > full.profile_log_el:
            full = full2
    stat = _clamp_elr(2.0 * (full.profile_log_el - null.profile_log_el), "goodness-of-fit ELR")
    df = ds.p
    pv = chi2_sf(stat, df)
    return TestResult(stat, df, pv, bool(pv < 0.05), full, null, refit)


class _FixedPiProfile:
    """Fixed-``pi`` fits against one unrestricted fit, with warm starts.

    When a fixed-``pi`` fit ends above the unrestricted fit, the
    unrestricted fit is rerun from it and :attr:`generation` is bumped so
    callers know earlier ratios are stale.
    """

    def __init__(self, ds: Dataset, opts: FitOptions, full: FitResult, warm_only=False):
        self.ds = ds
        self.warm_only = warm_only
        self.opts = replace(opts, fixed_pi=None)
        self.full = full
        self.spec = _spec_of(full)
        self.fits = {}
        self.n_fits = 0
        self.generation = 0

    def fixed_fit(self, pi0: float) -> FitResult:
        if pi0 in self.fits:
            return self.fits[pi0]
        warm = [self.full.theta.with_pi(pi0)]
        if self.fits:
            near = min(self.fits, key=lambda q: abs(q - pi0))
            warm.append(self.fits[near].theta.with_pi(pi0))
        fr = fit(self.ds, self.spec.with_fixed_pi(pi0), self.opts, warm_starts=warm,
                 include_default_starts=not self.warm_only)
        self.n_fits += 1
        self.fits[pi0] = fr
        if fr.profile_log_el > self.full.profile_log_el + NEG_SLACK:
            better = fit(self.ds, self.spec, self.opts, warm_starts=[fr.theta],
                         include_default_starts=False)
            if better.profile_log_el > self.full.profile_log_el:
                log.info("fixed-pi fit at %.6g improved the unrestricted fit by %.3g; "
                         "refitting", pi0, better.profile_log_el - self.full.profile_log_el)
                self.full = better
                self.generation += 1
        return fr

    def elr(self, pi0: float) -> float:
        fr = self.fixed_fit(pi0)
        return _clamp_elr(2.0 * (self.full.profile_log_el - fr.profile_log_el),
                          f"fixed-pi ELR at pi={pi0:.6g}")


def _check_pi(pi0):
    if not (0.0 < pi0 < 1.0) or not math.isfinite(pi0):
        raise DomainError(f"pi must lie in (0, 1), got {pi0!r}")


def elr_pi(ds: Dataset, pi0: float, opts: FitOptions = FitOptions(),
           full: Optional[FitResult] = None, spec: ModelSpec = DETM,
           warm_only: bool = False) -> float:
    """Likelihood ratio ``2 (l_N(theta_hat) - l_N(theta_hat_pi0))`` for ``pi = pi0``.

    The fixed-``pi`` fit uses the same multistart budget plus the
    unrestricted estimate with ``pi`` replaced by ``pi0`` as a warm start,
    so the fit keeps the unrestricted fit's component orientation. With
    ``warm_only`` the multistart budget is skipped and only warm starts run.
    """
    _check_pi(pi0)
    if full is None:
        full = fit(ds, spec, opts)
    prof = _FixedPiProfile(ds, opts, full, warm_only)
    return prof.elr(float(pi0))


def elr_curve(ds: Dataset, grid: Sequence[float], opts: FitOptions = FitOptions(),
              full: Optional[FitResult] = None, spec: ModelSpec = DETM,
              warm_only: bool = False) -> List[Tuple[float, float]]:
    """``(pi, R(pi))`` pairs over ``grid``; failed points carry ``nan``."""
    grid = [float(g) for g in grid]
    for g in grid:
        _check_pi(g)
    if full is None:
        full = fit(ds, spec, opts)
    prof = _FixedPiProfile(ds, opts, full, warm_only)
    for _ in range(4):
        gen = prof.generation
        out = []
        for g in grid:
            try:
                out.append((g, prof.elr(g)))
            except NumericalError as exc:
                log.warning("ELR curve point pi=%.6g failed: %s", g, exc)
                out.append((g, float("nan")))
        if prof.generation == gen:
            return out
        prof.fits.clear()
    return out


def _signed_root(r, q):
    # sqrt(R) is close to linear in pi near the optimum, which makes
    # false position converge in a few steps
    return math.sqrt(max(r, 0.0)) - math.sqrt(q)


def _crossing(prof: _FixedPiProfile, pi_hat: float, q: float, direction: int, curve):
    """Locate one crossing of ``R(pi) = q`` on one side of ``pi_hat``.

    Returns ``(endpoint, open_flag)``. The first probe is ``CI_STEP`` away
    from ``pi_hat``; later probes extrapolate ``sqrt(R)`` linearly and
    overshoot by 10% until ``R`` exceeds ``q``. The bracket is then refined
    by Illinois false position on ``sqrt(R) - sqrt(q)`` until
    ``|R - q| <= CI_VALUE_TOL`` or the bracket is narrower than 1e-9.
    """
    lo_dom, hi_dom = PI_DOMAIN
    edge = hi_dom if direction > 0 else lo_dom
    if (edge - pi_hat) * direction <= 0:
        return edge, True

    def value(pi):
        r = prof.elr(pi)
        curve.append((pi, r))
        return r

    inside, r_in = pi_hat, 0.0
    dist = CI_STEP
    while True:
        pi = pi_hat + direction * dist
        if (pi - edge) * direction >= 0:
            pi = edge
        r = value(pi)
        if r > q:
            outside, r_out = pi, r
            break
        if pi == edge:
            return edge, True
        inside, r_in = pi, r
        d_in = abs(pi - pi_hat)
        if r > 1e-12:
            guess = 1.1 * d_in * math.sqrt(q / r)
            dist = min(max(guess, d_in + CI_STEP / 4), d_in + 10 * CI_STEP)
        else:
            dist = d_in + CI_STEP
    f_in, f_out = _signed_root(r_in, q), _signed_root(r_out, q)
    best = min(((inside, r_in), (outside, r_out)), key=lambda t: abs(t[1] - q))
    side = 0
    for _ in range(60):
        if abs(best[1] - q) <= CI_VALUE_TOL or abs(outside - inside) < 1e-9:
            break
        x = outside - f_out * (outside - inside) / (f_out - f_in)
        if not (min(inside, outside) < x < max(inside, outside)):
            x = 0.5 * (inside + outside)
        r = value(x)
        f = _signed_root(r, q)
        if abs(r - q) < abs(best[1] - q):
            best = (x, r)
        if r > q:
            outside, f_out = x, f
            if side == 1:
                f_in *= 0.5
            side = 1
        else:
            inside, f_in = x, f
            if side == -1:
                f_out *= 0.5
            side = -1
    return best[0], False


def ci_pi(ds: Dataset, level: float = 0.95, opts: FitOptions = FitOptions(),
          full: Optional[FitResult] = None, spec: ModelSpec = DETM,
          record_curve: bool = False, warm_only: bool = False) -> ConfidenceInterval:
    """Confidence interval ``{pi : R(pi) <= chi2_quantile(level, 1)}``.

    Each side is searched outward from ``pi_hat`` (see :func:`_crossing`)
    inside ``(1e-4, 1 - 1e-4)``. An end that never crosses is returned at the
    domain boundary with its ``*_open`` flag set.
    """
    if not (0.5 <= level < 1.0):
        raise DomainError(f"level must lie in [0.5, 1), got {level!r}")
    if full is None:
        full = fit(ds, spec, opts)
    q = chi2_quantile(level, 1)
    prof = _FixedPiProfile(ds, opts, full, warm_only)
    for _ in range(4):
        gen = prof.generation
        curve = [(prof.full.pi, 0.0)]
        pi_hat = prof.full.pi
        lower, lower_open = _crossing(prof, pi_hat, q, -1, curve)
        upper, upper_open = _crossing(prof, pi_hat, q, +1, curve)
        if prof.generation == gen:
            break
        prof.fits.clear()
    else:
        raise NumericalError("unrestricted fit kept improving during the interval search")
    curve.sort()
    return ConfidenceInterval(
        lower=min(lower, pi_hat), upper=max(upper, pi_hat), level=level, pi_hat=pi_hat,
        critical_value=q, lower_open=lower_open, upper_open=upper_open,
        curve=curve if record_curve else None, n_fits=prof.n_fits, fit=prof.full)


# ---------------------------------------------------------------------------
# sandwich covariance


def parameter_names(p: int) -> tuple:
    return (("lambda1", "lambda2", "alpha1", "alpha2")
            + tuple(f"beta1[{j}]" for j in range(p))
            + tuple(f"beta2[{j}]" for j in range(p)) + ("pi",))


def _pack(lam1, lam2, theta: Theta) -> np.ndarray:
    return np.concatenate([[lam1, lam2, theta.alpha1, theta.alpha2],
                           theta.beta1, theta.beta2, [theta.pi]])


def _unpack(u, p):
    return (u[0], u[1], u[2], u[3], u[4:4 + p], u[4 + p:4 + 2 * p], u[-1])


def h_contributions(ds: Dataset, u) -> np.ndarray:
    """Per-row terms of the joint function ``h(lambda1, lambda2, theta)``.

    Row ``i`` contributes ``-log D_i`` and target rows additionally
    ``log(pi e^{g_1} + (1 - pi) e^{g_2})``. At the solved multipliers, the
    sum is the profile log-EL.
    """
    lam1, lam2, a1, a2, b1, b2, pi = _unpack(np.asarray(u, dtype=float), ds.p)
    x = ds.pooled
    g1 = a1 + x @ b1
    g2 = a2 + x @ b2
    sc = _scaled_terms(g1, g2)
    d = sc.s + lam1 * sc.u1 + lam2 * sc.u2
    with np.errstate(invalid="ignore", divide="ignore"):
        out = -(sc.mx + np.log(d))
    t = slice(ds.n, None)
    out[t] += np.logaddexp(math.log(pi) + g1[t], math.log1p(-pi) + g2[t])
    return out


def h_gradient_analytic(ds: Dataset, u) -> np.ndarray:
    """Exact per-row gradients of :func:`h_contributions` (rows x parameters)."""
    lam1, lam2, a1, a2, b1, b2, pi = _unpack(np.asarray(u, dtype=float), ds.p)
    x = ds.pooled
    g1 = a1 + x @ b1
    g2 = a2 + x @ b2
    e1, e2 = np.exp(g1), np.exp(g2)
    d = 1.0 + lam1 * (e1 - 1.0) + lam2 * (e2 - 1.0)
    p = ds.p
    G = np.zeros((ds.N, 2 * p + 5))
    G[:, 0] = -(e1 - 1.0) / d
    G[:, 1] = -(e2 - 1.0) / d
    G[:, 2] = -lam1 * e1 / d
    G[:, 3] = -lam2 * e2 / d
    G[:, 4:4 + p] = G[:, [2]] * x
    G[:, 4 + p:4 + 2 * p] = G[:, [3]] * x
    t = slice(ds.n, None)
    mix = pi * e1[t] + (1.0 - pi) * e2[t]
    w1 = pi * e1[t] / mix
    w2 = 1.0 - w1
    G[t, 2] += w1
    G[t, 3] += w2
    G[t, 4:4 + p] += w1[:, None] * x[t]
    G[t, 4 + p:4 + 2 * p] += w2[:, None] * x[t]
    G[t, -1] = (e1[t] - e2[t]) / mix
    return G


def _fd_steps(u):
    return 1e-5 * (1.0 + np.abs(u))


def h_gradient_fd(ds: Dataset, u) -> np.ndarray:
    """Per-row gradients of :func:`h_contributions` by central differences."""
    u = np.asarray(u, dtype=float)
    steps = _fd_steps(u)
    G = np.empty((ds.N, u.size))
    for k in range(u.size):
        up, dn = u.copy(), u.copy()
        up[k] += steps[k]
        dn[k] -= steps[k]
        G[:, k] = (h_contributions(ds, up) - h_contributions(ds, dn)) / (2.0 * steps[k])
    return G


def h_hessian_fd(ds: Dataset, u) -> np.ndarray:
    """Hessian of ``sum_i h_i`` by central second differences."""
    u = np.asarray(u, dtype=float)
    steps = _fd_steps(u)
    d = u.size

    def total(v):
        return float(h_contributions(ds, v).sum())

    f0 = total(u)
    H = np.empty((d, d))
    for k in range(d):
        ek = np.zeros(d)
        ek[k] = steps[k]
        H[k, k] = (total(u + 2 * ek) - 2.0 * f0 + total(u - 2 * ek)) / (4.0 * steps[k] ** 2)
        for j in range(k):
            ej = np.zeros(d)
            ej[j] = steps[j]
            val = (total(u + ek + ej) - total(u + ek - ej)
                   - total(u - ek + ej) + total(u - ek - ej)) / (4.0 * steps[k] * steps[j])
            H[k, j] = H[j, k] = val
    return H


def asymptotic_covariance(ds: Dataset, fr: FitResult, rcond: float = 1e-10) -> CovarianceEstimate:
    """Plug-in sandwich covariance from per-row contributions to ``h``.

    ``V`` averages outer products of per-row gradients centered within the
    source and within the target sample; ``W`` is minus the Hessian of
    ``sum h`` over ``N``. Both use central differences with step
    ``1e-5 (1 + |u_k|)``.

    Raises
    ------
    RankError
        ``W`` is numerically singular.
    """
    if fr.model is not Model.DETM:
        raise DomainError(f"covariance needs an unrestricted two-tilt fit, got {fr.model.value}")
    lam = solve_lagrange(ds, fr.theta)
    u = _pack(lam.lambda1, lam.lambda2, fr.theta)
    G = h_gradient_fd(ds, u)
    Gc = G.copy()
    Gc[:ds.n] -= G[:ds.n].mean(axis=0)
    Gc[ds.n:] -= G[ds.n:].mean(axis=0)
    N = ds.N
    V = Gc.T @ Gc / N
    W = -h_hessian_fd(ds, u) / N
    W = 0.5 * (W + W.T)
    sv = np.linalg.svd(W, compute_uv=False)
    if sv[-1] <= rcond * sv[0]:
        raise RankError(
            f"negative mean Hessian W is not full rank (smallest/largest singular value "
            f"{sv[-1] / sv[0]:.3g})")
    Winv = np.linalg.inv(W)
    S = Winv @ V @ Winv.T
    S = 0.5 * (S + S.T)
    return CovarianceEstimate(S, V, W, parameter_names(ds.p), N)
