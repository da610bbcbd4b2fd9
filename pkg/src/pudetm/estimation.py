"""Maximum empirical likelihood estimation by EM.

Each EM iteration computes the posterior component-1 weights of the target
rows, updates ``pi`` as their mean, fits a weighted three-class multinomial
logistic regression for the shifted intercepts and slopes, maps the
intercepts back to normalizing constants and sets the point masses from
the baseline-class probabilities.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import expit, logsumexp

from . import kernels
from .core import (Dataset, FitResult, LabelRule, Model, Theta, validate_dataset)
from .errors import (DataError, DomainError, FeasibilityError, NonConvergenceError,
                     NumericalError, TieError)
from .likelihood import LagrangePair, class_weights, profile_with_multipliers, tilts
from .numerics import NewtonOptions, damped_newton

log = logging.getLogger(__name__)

PI_CLAMP = 1e-6
PARAM_TOL = 1e-8
MSTEP_GRAD_TOL = 1e-9


@dataclass(frozen=True)
class ModelSpec:
    """``kind`` is ``"DETM"`` or ``"SETM"``; ``fixed_pi`` pins the mixture share."""

    kind: str = "DETM"
    fixed_pi: Optional[float] = None

    def __post_init__(self):
        kind = str(self.kind).upper()
        if kind not in ("DETM", "SETM"):
            raise DomainError(f"model kind must be DETM or SETM, got {self.kind!r}")
        object.__setattr__(self, "kind", kind)
        if self.fixed_pi is not None and not (0.0 < self.fixed_pi < 1.0):
            raise DomainError(f"fixed_pi must lie in (0, 1), got {self.fixed_pi!r}")

    @property
    def single(self) -> bool:
        return self.kind == "SETM"

    @property
    def model(self) -> Model:
        if self.fixed_pi is None:
            return Model.SETM if self.single else Model.DETM
        return Model.SETM_FIXED_PI if self.single else Model.DETM_FIXED_PI

    def with_fixed_pi(self, pi: Optional[float]) -> "ModelSpec":
        return ModelSpec(self.kind, pi)


DETM = ModelSpec("DETM")
SETM = ModelSpec("SETM")


@dataclass(frozen=True)
class FitOptions:
    tol: float = 1e-6
    max_em_iter: int = 2000
    n_starts: int = 10
    seed: int = 0
    label_rule: LabelRule = LabelRule.KL_RULE
    fixed_pi: Optional[float] = None
    # sd of the Gaussian perturbation applied to slopes in random starts; a
    # sequence of sds is cycled through start by start
    start_sd: Union[float, Tuple[float, ...]] = 0.5
    # squared-extrapolation steps between EM iterations, kept only when they
    # raise the log-EL, so the trace stays non-decreasing
    accelerate: bool = True

    def __post_init__(self):
        if not self.tol > 0:
            raise DomainError("tol must be positive")
        if self.n_starts < 1:
            raise DomainError("n_starts must be >= 1")
        if self.max_em_iter < 1:
            raise DomainError("max_em_iter must be >= 1")
        object.__setattr__(self, "label_rule", LabelRule(self.label_rule))
        if self.fixed_pi is not None and not (0.0 < self.fixed_pi < 1.0):
            raise DomainError(f"fixed_pi must lie in (0, 1), got {self.fixed_pi!r}")
        sds = np.atleast_1d(np.asarray(self.start_sd, dtype=float))
        if sds.size == 0 or not np.all(sds > 0):
            raise DomainError(f"start_sd must be positive, got {self.start_sd!r}")
        if sds.size > 1:
            object.__setattr__(self, "start_sd", tuple(float(v) for v in sds))

    @property
    def start_sds(self) -> Tuple[float, ...]:
        return tuple(np.atleast_1d(np.asarray(self.start_sd, dtype=float)).tolist())


# ---------------------------------------------------------------------------
# E-step


def e_step(ds: Dataset, theta: Theta) -> np.ndarray:
    """Posterior probability that each target row belongs to component 1."""
    return _e_terms(ds, theta)[1]


def _e_terms(ds: Dataset, theta: Theta):
    x = ds.target_x
    g1 = theta.alpha1 + x @ theta.beta1
    g2 = theta.alpha2 + x @ theta.beta2
    return kernels.mixture_terms(g1, g2, math.log(theta.pi), math.log1p(-theta.pi))


# ---------------------------------------------------------------------------
# M-step


def _mstep_newton_opts(ds: Dataset) -> NewtonOptions:
    scale = max(1.0, float(np.max(np.abs(ds.pooled))))
    return NewtonOptions(max_iter=100, grad_tol=MSTEP_GRAD_TOL * scale, step_halving_max=40)


def _default_coef(ds: Dataset, omega) -> np.ndarray:
    k = ds.p + 1
    sw = float(np.sum(omega))
    coef = np.zeros(2 * k)
    coef[0] = math.log(max(sw, 1e-300) / ds.n)
    coef[k] = math.log(max(ds.m - sw, 1e-300) / ds.n)
    return coef


def _rebalance(Q, coef, w1, w2, single):
    """Shift each class intercept so its fitted total is near its weight total.

    When a class weight collapses towards zero its intercept must move far
    and Newton, started from the previous solution, only creeps there. For
    small class probabilities the shift below is the exact intercept update.
    """
    k = Q.shape[1]
    e = np.stack([np.zeros(Q.shape[0]), Q @ coef[:k], Q @ coef[k:]])
    logp = e - logsumexp(e, axis=0)
    for t, w in ((1, w1), (2, w2)):
        if single and t == 1:
            continue
        shift = math.log(max(float(np.sum(w)), 1e-300)) - float(logsumexp(logp[t]))
        if abs(shift) > 1.0:
            coef[(t - 1) * k] += shift
    return coef


def fit_weighted_multinomial(ds: Dataset, omega, start=None, single: bool = False,
                             opts: NewtonOptions = None, generalized: bool = False) -> np.ndarray:
    """Maximize the weighted multinomial objective over ``(a1, b1, a2, b2)``.

    With ``single=True`` the class-1 slopes are held at zero and its
    intercept at ``log(sum(omega) / n)``, the value at which component 1
    has normalizing constant zero.

    With ``generalized=True`` a Newton run that stops short of a maximizer
    still returns its last iterate when that iterate is finite and improves
    on ``start``. Inside EM such a step keeps the log-EL non-decreasing; it
    arises when the weighted classes are separable up to a few boundary
    points, so the supremum lies at infinity and the gradient never reaches
    rounding level.

    Raises
    ------
    NonConvergenceError
        Newton failed, typically because the weighted classes are separable;
        the message names the coordinate that ran away.
    """
    omega = np.asarray(omega, dtype=float)
    w1, w2 = class_weights(ds, omega)
    k = ds.p + 1
    Q = ds.design
    if start is None:
        coef = _default_coef(ds, omega)
        ref = coef.copy()
    else:
        ref = np.array(start, dtype=float)
        coef = _rebalance(Q, ref.copy(), w1, w2, single)
    opts = opts or _mstep_newton_opts(ds)
    if single:
        b1 = np.zeros(k)
        b1[0] = _default_coef(ds, omega)[0]

        def obj(b2):
            v, g, h = kernels.multinomial_terms(Q, b1, b2, w1, w2, True)
            return v, g[k:], h[k:, k:]
        x0 = coef[k:]
    else:
        def obj(c):
            return kernels.multinomial_terms(Q, c[:k], c[k:], w1, w2, True)
        x0 = coef
    try:
        res = damped_newton(obj, x0, opts)
    except NonConvergenceError as exc:
        last = exc.last_iterate if exc.last_iterate is not None else x0
        if _separated(obj, last, w1, w2, single) or (
                generalized and _improves(obj, last, ref[k:] if single else ref)):
            return np.concatenate([b1, last]) if single else last
        j = int(np.argmax(np.abs(last)))
        offset = k if single else 0
        name = _coef_name(j + offset, k)
        raise NonConvergenceError(
            f"weighted multinomial fit did not converge; coordinate {name} "
            f"reached {last[j]:.4g}: {exc}", last_iterate=last) from None
    if single:
        return np.concatenate([b1, res.x])
    return res.x


def _separated(obj, coef, w1, w2, single) -> bool:
    """Whether ``coef`` runs off along a separating direction with the weighted
    moment conditions already met to rounding level.

    On separable weights the maximum sits at infinity and Newton never takes
    a small step; the iterate is still a maximizer up to a gradient that is
    negligible next to each class's total weight.
    """
    f, g, _ = obj(coef)
    totals = [float(np.sum(w2))] if single else [float(np.sum(w1)), float(np.sum(w2))]
    # a class with no weight runs off to zero probability, which is its maximizer
    live = [t for t in totals if t > 1e-8]
    if not live:
        return False
    return (np.isfinite(f) and np.all(np.isfinite(coef))
            and float(np.max(np.abs(g))) <= 1e-10 * min(live))


def _improves(obj, coef, ref) -> bool:
    if not np.all(np.isfinite(coef)):
        return False
    f = obj(coef)[0]
    return bool(np.isfinite(f) and f >= obj(ref)[0])


def _coef_name(j, k):
    cls, pos = divmod(j, k)
    return f"{'alpha' if pos == 0 else 'beta'}{cls + 1}" + ("" if pos == 0 else f"[{pos - 1}]")


@dataclass(frozen=True)
class MStepResult:
    theta: Theta
    weights: np.ndarray
    coef: np.ndarray
    clamped: bool = False
    log_weights: Optional[np.ndarray] = None


def m_step(ds: Dataset, omega, spec: ModelSpec = DETM, start=None,
           newton_opts: NewtonOptions = None, generalized: bool = False) -> MStepResult:
    """One M-step: mixture share, multinomial fit, intercept shift, point masses.

    ``generalized`` is passed on to :func:`fit_weighted_multinomial`.
    """
    omega = np.asarray(omega, dtype=float)
    clamped = False
    if spec.fixed_pi is not None:
        pi = spec.fixed_pi
    else:
        pi = float(np.mean(omega))
        if pi < PI_CLAMP or pi > 1.0 - PI_CLAMP:
            pi = min(max(pi, PI_CLAMP), 1.0 - PI_CLAMP)
            clamped = True
    coef = fit_weighted_multinomial(ds, omega, start=start, single=spec.single,
                                    opts=newton_opts, generalized=generalized)
    k = ds.p + 1
    sw = float(np.sum(omega))
    shift1 = math.log(max(sw, 1e-300) / ds.n)
    shift2 = math.log(max(ds.m - sw, 1e-300) / ds.n)
    if spec.single:
        a1, b1 = 0.0, np.zeros(ds.p)
    else:
        a1, b1 = coef[0] - shift1, coef[1:k]
    theta = Theta(a1, coef[k] - shift2, b1, coef[k + 1:], pi)
    # baseline-class probabilities over n
    Q = ds.design
    e1 = Q @ coef[:k]
    e2 = Q @ coef[k:]
    log_weights = -logsumexp(np.stack([np.zeros_like(e1), e1, e2]), axis=0) - math.log(ds.n)
    return MStepResult(theta, np.exp(log_weights), coef, clamped, log_weights)


# ---------------------------------------------------------------------------
# EM driver


@dataclass
class _Run:
    theta: Theta
    weights: np.ndarray
    log_el: float
    trace: np.ndarray
    converged: bool
    n_iter: int
    boundary: bool


@dataclass
class _State:
    theta: Theta
    coef: np.ndarray
    weights: np.ndarray
    log_el: float
    omega: np.ndarray
    clamped: bool


def _em_map(ds, spec, theta, omega, coef, nopts) -> _State:
    """One full EM iteration from ``theta`` (whose E-step weights are ``omega``)."""
    ms = m_step(ds, omega, spec, start=coef, newton_opts=nopts, generalized=True)
    mix_sum, omega_next = _e_terms(ds, ms.theta)
    ll = float(ms.log_weights.sum()) + mix_sum
    return _State(ms.theta, ms.coef, ms.weights, ll, omega_next, ms.clamped)


def _extrapolate(v0, v1, v2, spec):
    # squared extrapolation with the steplength -|r| / |v|
    r = v1 - v0
    v = v2 - v1 - r
    nv = float(np.linalg.norm(v))
    if nv == 0.0:
        return None
    a = min(-1.0, -float(np.linalg.norm(r)) / nv)
    out = v0 - 2.0 * a * r + a * a * v
    if not np.all(np.isfinite(out)):
        return None
    if spec.fixed_pi is None:
        out[-1] = min(max(out[-1], PI_CLAMP), 1.0 - PI_CLAMP)
    return out


def _run_em(ds: Dataset, spec: ModelSpec, theta0: Theta, opts: FitOptions) -> _Run:
    theta = theta0 if spec.fixed_pi is None else theta0.with_pi(spec.fixed_pi)
    if spec.single:
        theta = Theta(0.0, theta.alpha2, np.zeros(ds.p), theta.beta2, theta.pi)
    nopts = _mstep_newton_opts(ds)
    _, omega = _e_terms(ds, theta)
    trace = []
    last_vec = [theta.to_vector()]
    n_maps = 0

    def advance(th, om, coef):
        nonlocal n_maps
        n_maps += 1
        return _em_map(ds, spec, th, om, coef, nopts)

    def accept(st) -> bool:
        # record an iterate; True once the increment or parameter change is small
        trace.append(st.log_el)
        vec = st.theta.to_vector()
        step = float(np.max(np.abs(vec - last_vec[0])))
        last_vec[0] = vec
        return len(trace) >= 2 and (trace[-1] - trace[-2] <= opts.tol or step <= PARAM_TOL)

    base = _State(theta, None, None, -np.inf, omega, False)
    cur = None
    converged = False
    while n_maps < opts.max_em_iter:
        v0 = base.theta.to_vector()
        cur = advance(base.theta, base.omega, base.coef)
        if accept(cur):
            converged = True
            break
        base = cur
        if not opts.accelerate or n_maps >= opts.max_em_iter:
            continue
        s1 = cur
        cur = advance(s1.theta, s1.omega, s1.coef)
        if accept(cur):
            converged = True
            break
        base = cur
        if n_maps >= opts.max_em_iter:
            break
        ext = _extrapolate(v0, s1.theta.to_vector(), cur.theta.to_vector(), spec)
        if ext is None:
            continue
        try:
            th = Theta.from_vector(ext, ds.p)
            _, om = _e_terms(ds, th)
            s3 = advance(th, om, cur.coef)
        except (NumericalError, ValueError):
            continue
        # keep the extrapolated iterate only if it improves on plain EM
        if np.isfinite(s3.log_el) and s3.log_el >= cur.log_el:
            cur = base = s3
            if accept(cur):
                converged = True
                break
    return _Run(cur.theta, cur.weights, trace[-1], np.array(trace), converged, n_maps,
                cur.clamped)


def _logistic_init(ds: Dataset):
    """Slopes and density-ratio intercept of a ridge-stabilized logistic
    regression of target membership on the features."""
    Q = ds.design
    y = ds.is_target.astype(float)
    ridge = 1e-6 * ds.N
    k = ds.p + 1

    def obj(b):
        eta = Q @ b
        val = float(y @ eta - np.logaddexp(0.0, eta).sum()) - 0.5 * ridge * float(b[1:] @ b[1:])
        pr = expit(eta)
        g = Q.T @ (y - pr)
        g[1:] -= ridge * b[1:]
        H = -(Q.T @ (Q * (pr * (1.0 - pr))[:, None]))
        H[1:, 1:] -= ridge * np.eye(k - 1)
        return val, g, H

    b0 = np.zeros(k)
    b0[0] = math.log(ds.m / ds.n)
    try:
        b = damped_newton(obj, b0, NewtonOptions(max_iter=100, grad_tol=1e-8)).x
    except NumericalError:
        b = b0
    return b[0] - math.log(ds.m / ds.n), b[1:]


def normalizing_intercept(ds: Dataset, beta) -> float:
    """Intercept making the tilt ``exp(a + x beta)`` average to one over the source rows."""
    z = ds.source_x @ beta
    mz = float(np.max(z))
    return -(mz + math.log(float(np.mean(np.exp(z - mz)))))


def initial_thetas(ds: Dataset, spec: ModelSpec, opts: FitOptions) -> list:
    """Deterministic logistic-regression start followed by random perturbations."""
    _, slope = _logistic_init(ds)
    p = ds.p
    pi0 = spec.fixed_pi if spec.fixed_pi is not None else 0.5
    b2 = slope
    starts = [Theta(0.0, normalizing_intercept(ds, b2), np.zeros(p), b2, pi0)]
    rng = np.random.default_rng(opts.seed)
    sds = opts.start_sds
    for i in range(opts.n_starts - 1):
        sd = sds[i % len(sds)]
        nb1 = np.zeros(p) if spec.single else rng.normal(0.0, sd, p)
        nb2 = slope + rng.normal(0.0, sd, p)
        pi_r = rng.uniform(0.1, 0.9)
        if spec.fixed_pi is not None:
            pi_r = spec.fixed_pi
        starts.append(Theta(normalizing_intercept(ds, nb1), normalizing_intercept(ds, nb2),
                            nb1, nb2, pi_r))
    return starts


def _finish(ds: Dataset, spec: ModelSpec, run: _Run, start_index: int) -> FitResult:
    theta = run.theta
    try:
        prof, lam = profile_with_multipliers(ds, theta)
        degenerate = lam.degenerate
    except FeasibilityError:
        # fall back to the multipliers implied by the last M-step
        omega_sum = float(np.sum(e_step(ds, theta)))
        lam = LagrangePair(omega_sum / ds.N, (ds.m - omega_sum) / ds.N)
        prof = run.log_el + ds.N * math.log(ds.N)
        degenerate = False
    return FitResult(
        theta=theta, lambda1=lam.lambda1, lambda2=lam.lambda2,
        el_weights=run.weights, profile_log_el=prof, log_el=run.log_el,
        model=spec.model, trace=run.trace, converged=run.converged,
        n_iterations=run.n_iter, boundary=run.boundary, start_index=start_index,
        lagrange_degenerate=degenerate)


def fit(ds: Dataset, spec: ModelSpec = DETM, opts: FitOptions = FitOptions(),
        warm_starts: Sequence[Theta] = (), include_default_starts: bool = True) -> FitResult:
    """Maximum empirical likelihood estimate by multistart EM.

    Starts are the logistic-regression start, ``n_starts - 1`` random
    perturbations of it, then any ``warm_starts``. The start with the largest
    profile log-EL wins (ties within 1e-9 go to the lowest index). For the
    unconstrained two-tilt model the label-switching rule in ``opts`` is
    applied to the winner.

    Raises
    ------
    DataError
        The pooled design is rank deficient.
    NonConvergenceError
        Every start failed inside the M-step or Lagrange solver.
    """
    if spec.fixed_pi is None and opts.fixed_pi is not None:
        spec = spec.with_fixed_pi(opts.fixed_pi)
    validate_dataset(ds).require_full_rank()
    starts = list(initial_thetas(ds, spec, opts)) if include_default_starts else []
    starts.extend(warm_starts)
    if not starts:
        raise DomainError("no starting values")
    best = None
    failures = []
    finals = []
    for idx, th0 in enumerate(starts):
        try:
            run = _run_em(ds, spec, th0, opts)
            res = _finish(ds, spec, run, idx)
        except (NumericalError, DataError) as exc:
            failures.append((idx, exc))
            finals.append(float("nan"))
            log.debug("start %d failed: %s", idx, exc)
            continue
        finals.append(res.profile_log_el)
        if best is None or res.profile_log_el > best.profile_log_el + 1e-9:
            best = res
    if best is None:
        msgs = "; ".join(f"start {i}: {e}" for i, e in failures)
        raise NonConvergenceError(f"all {len(starts)} EM starts failed ({msgs})")
    best = replace(best, n_failed_starts=len(failures), start_log_els=tuple(finals))
    if spec.model is Model.DETM:
        best = resolve_label_switch(best, ds, opts.label_rule)
    return best


# ---------------------------------------------------------------------------
# label switching


def switch_labels(fr: FitResult) -> FitResult:
    return replace(fr, theta=fr.theta.switched(), lambda1=fr.lambda2, lambda2=fr.lambda1,
                   label_switched=not fr.label_switched)


def kl_to_components(fr: FitResult, ds: Dataset):
    """Plug-in ``KL(source || component t)`` for t = 1, 2, weighted by the EL masses."""
    g1, g2 = tilts(ds, fr.theta)
    w = fr.el_weights
    return -float(w @ g1), -float(w @ g2)


def resolve_label_switch(fr: FitResult, ds: Dataset, rule=LabelRule.KL_RULE) -> FitResult:
    """Choose the orientation of a two-tilt fit.

    ``pi_less_half`` makes component 1 the minority; ``kl_rule`` makes
    component 1 the one closer to the source in plug-in KL divergence;
    ``none`` leaves the fit as it is. Both orientations share one profile
    log-EL.
    """
    rule = LabelRule(rule)
    if rule is LabelRule.NONE:
        return replace(fr, label_rule=rule)
    if rule is LabelRule.PI_LESS_HALF:
        if fr.theta.pi == 0.5:
            raise TieError("pi is exactly 0.5; use the kl_rule to orient the fit")
        out = switch_labels(fr) if fr.theta.pi > 0.5 else fr
        return replace(out, label_rule=rule)
    kl1, kl2 = kl_to_components(fr, ds)
    out = switch_labels(fr) if kl2 < kl1 else fr
    return replace(out, label_rule=rule)
