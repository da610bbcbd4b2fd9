"""Data-generating mechanisms and a seeded Monte-Carlo experiment runner.

Every replicate draws from its own random stream, derived from the master
seed, the cell index and the replicate index, so a report does not depend
on how replicates are spread over worker processes.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import logging
import math
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .classify import l1_posterior_distance, predict_labels
from .core import Dataset, LabelRule, Theta
from .errors import ConfigError, PUDETMError
from .estimation import DETM, SETM, FitOptions, fit
from .inference import ci_pi, gof_test_scar

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

log = logging.getLogger(__name__)

TASKS = ("gof", "estimate", "coverage", "classify")
KINDS = ("scar", "sar", "custom")


def _vec(v, p, what):
    arr = np.asarray(v, dtype=float).reshape(-1)
    if arr.size == 1 and p > 1:
        arr = np.full(p, float(arr[0]))
    if arr.shape != (p,):
        raise ConfigError(f"{what} has length {arr.size}, expected p={p}")
    if not np.all(np.isfinite(arr)):
        raise ConfigError(f"{what} has non-finite entries")
    return tuple(float(a) for a in arr)


@dataclass(frozen=True)
class ScenarioConfig:
    """Gaussian PU scenario with identity covariances.

    Source rows come from ``N(mu_source, I)``; target rows are positive with
    probability ``pi`` and drawn from ``N(mu_target_pos, I)``, otherwise from
    ``N(mu_target_neg, I)``. For ``kind="scar"`` the target positives share
    the source mean.
    """

    p: int = 15
    mu_source: tuple = None
    mu_target_pos: tuple = None
    mu_target_neg: tuple = None
    pi: float = 0.75
    n: int = 1000
    m: Optional[int] = None
    kind: str = "scar"
    validation_size: Optional[int] = None
    fixed_count: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if int(self.p) < 1:
            raise ConfigError("p must be >= 1")
        p = int(self.p)
        object.__setattr__(self, "p", p)
        mu_s = _vec(0.0 if self.mu_source is None else self.mu_source, p, "mu_source")
        if self.mu_target_neg is None:
            mu_n = (1.0,) * p
        else:
            mu_n = _vec(self.mu_target_neg, p, "mu_target_neg")
        if self.kind == "scar":
            if self.mu_target_pos is not None and _vec(self.mu_target_pos, p, "mu_target_pos") != mu_s:
                raise ConfigError("a scar scenario needs mu_target_pos equal to mu_source")
            mu_p = mu_s
        elif self.mu_target_pos is None:
            if self.kind == "sar":
                k = min(7, p)
                mu_p = (1.0,) * k + (0.0,) * (p - k)
            else:
                raise ConfigError("a custom scenario needs mu_target_pos")
        else:
            mu_p = _vec(self.mu_target_pos, p, "mu_target_pos")
        object.__setattr__(self, "mu_source", mu_s)
        object.__setattr__(self, "mu_target_pos", mu_p)
        object.__setattr__(self, "mu_target_neg", mu_n)
        if not (0.0 < float(self.pi) < 1.0):
            raise ConfigError(f"pi must lie in (0, 1), got {self.pi!r}")
        object.__setattr__(self, "pi", float(self.pi))
        m = self.n if self.m is None else self.m
        v = self.n if self.validation_size is None else self.validation_size
        if int(self.n) < 1 or int(m) < 1 or int(v) < 0:
            raise ConfigError("sample sizes must be positive")
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "m", int(m))
        object.__setattr__(self, "validation_size", int(v))

    @classmethod
    def scar(cls, n: int, pi: float, p: int = 15, **kw) -> "ScenarioConfig":
        return cls(p=p, pi=pi, n=n, kind="scar", **kw)

    @classmethod
    def sar(cls, n: int, pi: float, p: int = 15, n_shifted: int = 7, **kw) -> "ScenarioConfig":
        """Target positives have mean one in the first ``n_shifted`` coordinates."""
        mu = (1.0,) * n_shifted + (0.0,) * (p - n_shifted)
        return cls(p=p, pi=pi, n=n, kind="sar" if n_shifted else "scar",
                   mu_target_pos=mu if n_shifted else None, **kw)


def true_theta(cfg: ScenarioConfig) -> Theta:
    """Exact tilt parameters of the scenario.

    For unit-covariance normals, ``log N(x; mu, I) / N(x; mu_s, I)`` is
    ``x (mu - mu_s) - (|mu|^2 - |mu_s|^2) / 2``.
    """
    ms = np.array(cfg.mu_source)

    def tilt(mu):
        mu = np.array(mu)
        return -0.5 * (mu @ mu - ms @ ms), mu - ms

    a1, b1 = tilt(cfg.mu_target_pos)
    a2, b2 = tilt(cfg.mu_target_neg)
    return Theta(a1, a2, b1, b2, cfg.pi)


def sample_mvn(mu, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` draws from ``N(mu, I)``."""
    mu = np.asarray(mu, dtype=float)
    if n < 0:
        raise ConfigError("sample size must be non-negative")
    return rng.standard_normal((n, mu.size)) + mu


def _mixture(cfg: ScenarioConfig, size: int, rng):
    if cfg.fixed_count:
        k = int(math.floor(size * cfg.pi))
    else:
        k = int(rng.binomial(size, cfg.pi))
    x = np.vstack([sample_mvn(cfg.mu_target_pos, k, rng),
                   sample_mvn(cfg.mu_target_neg, size - k, rng)])
    y = np.concatenate([np.ones(k, dtype=int), np.zeros(size - k, dtype=int)])
    return x, y


@dataclass(frozen=True, eq=False)
class Validation:
    x: np.ndarray
    y: np.ndarray


def generate_pu(cfg: ScenarioConfig, rng: np.random.Generator) -> Tuple[Dataset, Validation]:
    """Draw the source sample, the unlabeled target sample and a labeled
    validation sample from the target distribution."""
    src = sample_mvn(cfg.mu_source, cfg.n, rng)
    tgt, _ = _mixture(cfg, cfg.m, rng)
    vx, vy = _mixture(cfg, cfg.validation_size, rng)
    return Dataset(src, tgt), Validation(vx, vy)


# ---------------------------------------------------------------------------
# experiments


def _runs(vec) -> str:
    """Run-length form of a mean vector, e.g. ``1x7_0x8``."""
    parts = [f"{v:g}x{len(list(g))}" for v, g in itertools.groupby(vec)]
    return "_".join(parts)


@dataclass(frozen=True)
class Cell:
    """One scenario paired with one task, or several joined by ``+``.

    ``model`` selects the fitted model for estimate, coverage and classify
    (the goodness-of-fit task always fits both). Combined tasks share the
    dataset and the fit of each replicate.
    """

    scenario: ScenarioConfig
    task: str
    model: str = "DETM"
    name: str = ""
    replicates: Optional[int] = None
    level: float = 0.95
    n_starts: int = 1
    tol: float = 1e-6
    label_rule: str = "kl_rule"
    warm_only: bool = True

    def __post_init__(self):
        task = self.task
        if isinstance(task, (list, tuple)):
            task = "+".join(task)
        parts = str(task).split("+")
        for t in parts:
            if t not in TASKS:
                raise ConfigError(f"task must be one of {TASKS} or a '+' combination, "
                                  f"got {self.task!r}")
        object.__setattr__(self, "task", "+".join(t for t in TASKS if t in parts))
        model = str(self.model).upper()
        if model not in ("DETM", "SETM"):
            raise ConfigError(f"model must be DETM or SETM, got {self.model!r}")
        object.__setattr__(self, "model", model)
        if not (0.5 <= self.level < 1.0):
            raise ConfigError(f"level must lie in [0.5, 1), got {self.level!r}")
        if self.replicates is not None and self.replicates < 1:
            raise ConfigError("replicates must be >= 1")
        LabelRule(self.label_rule)

    @property
    def tasks(self) -> tuple:
        return tuple(self.task.split("+"))

    def label(self) -> str:
        if self.name:
            return self.name
        s = self.scenario
        out = f"{self.task}-{self.model.lower()}-{s.kind}-n{s.n}-pi{s.pi:g}"
        if s.m != s.n:
            out += f"-m{s.m}"
        if s.mu_target_pos != s.mu_source:
            out += "-pos" + _runs(s.mu_target_pos)
        if s.mu_target_neg != (1.0,) * s.p:
            out += "-neg" + _runs(s.mu_target_neg)
        return out

    def fit_options(self, seed: int) -> FitOptions:
        return FitOptions(tol=self.tol, n_starts=self.n_starts, seed=seed,
                          label_rule=LabelRule(self.label_rule))


def replicate_seed(master: int, cell_index: int, rep: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=master, spawn_key=(cell_index, rep))


def run_replicate(cell: Cell, ss: np.random.SeedSequence) -> dict:
    """Run one replicate of a cell; returns a flat dict of results.

    All tasks of the cell share one dataset and one fit of the cell's model.
    """
    rng = np.random.default_rng(ss)
    fit_seed = int(ss.generate_state(1)[0])
    ds, val = generate_pu(cell.scenario, rng)
    opts = cell.fit_options(fit_seed)
    spec = SETM if cell.model == "SETM" else DETM
    tasks = cell.tasks
    fr = fit(ds, spec, opts) if set(tasks) - {"gof"} else None
    out = {}
    if fr is not None:
        out.update(pi_hat=fr.pi, boundary=bool(fr.boundary), converged=bool(fr.converged))
    if "gof" in tasks:
        tr = gof_test_scar(ds, opts, full=fr if spec is DETM else None)
        out.update(statistic=tr.statistic, p_value=tr.p_value, reject=bool(tr.reject_at_0_05),
                   pi_hat_full=tr.fit_full.pi, pi_hat_null=tr.fit_null.pi)
        out.setdefault("pi_hat", tr.fit_full.pi)
    if "coverage" in tasks:
        ci = ci_pi(ds, cell.level, opts, full=fr, warm_only=cell.warm_only)
        out.update(lower=ci.lower, upper=ci.upper, covered=bool(ci.contains(cell.scenario.pi)),
                   open=bool(ci.lower_open or ci.upper_open))
        # the interval search may have improved the fit
        out["pi_hat"] = ci.pi_hat
    if "classify" in tasks:
        truth = true_theta(cell.scenario)
        labels = predict_labels(fr.theta, val.x)
        oracle = predict_labels(truth, val.x)
        out.update(accuracy=float(np.mean(labels == val.y)),
                   oracle_accuracy=float(np.mean(oracle == val.y)),
                   l1_distance=l1_posterior_distance(fr.theta, truth, val.x))
    return out


def _replicate_job(args):
    cell, master, ci, rep = args
    try:
        return ci, rep, run_replicate(cell, replicate_seed(master, ci, rep)), None
    except PUDETMError as exc:
        return ci, rep, None, f"{type(exc).__name__}: {exc}"


@dataclass
class CellSummary:
    name: str
    task: str
    model: str
    kind: str
    n: int
    m: int
    pi: float
    replicates: int
    seed_range: Tuple[int, int]
    n_ok: int
    n_failed: int
    metrics: Dict[str, float] = field(default_factory=dict)
    failures: List[str] = field(default_factory=list)
    values: List[Optional[dict]] = field(default_factory=list)


def _summarize(cell: Cell, results: List[Optional[dict]]) -> Dict[str, float]:
    ok = [r for r in results if r is not None]
    if not ok:
        return {}
    true_pi = cell.scenario.pi

    def arr(key):
        return np.array([float(r[key]) for r in ok])

    met = {}
    pis = arr("pi_hat")
    met["pi_hat_mean"] = float(pis.mean())
    met["pi_hat_sd"] = float(pis.std(ddof=1)) if pis.size > 1 else 0.0
    met["pi_hat_mse"] = float(np.mean((pis - true_pi) ** 2))
    tasks = cell.tasks
    if "gof" in tasks:
        met["rejection_rate"] = float(arr("reject").mean())
        met["statistic_mean"] = float(arr("statistic").mean())
    if "boundary" in ok[0]:
        met["boundary_rate"] = float(arr("boundary").mean())
    if "coverage" in tasks:
        met["coverage"] = float(arr("covered").mean())
        met["mean_width"] = float(np.mean(arr("upper") - arr("lower")))
    if "classify" in tasks:
        acc = arr("accuracy")
        met["accuracy_mean"] = float(acc.mean())
        met["accuracy_median"] = float(np.median(acc))
        met["oracle_accuracy_median"] = float(np.median(arr("oracle_accuracy")))
        met["l1_distance_median"] = float(np.median(arr("l1_distance")))
    return met


@dataclass
class ExperimentReport:
    master_seed: int
    cells: List[CellSummary]

    def cell(self, name: str) -> CellSummary:
        for c in self.cells:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_json(self, include_values: bool = True) -> str:
        def enc(c: CellSummary):
            d = asdict(c)
            d["seed_range"] = list(c.seed_range)
            if not include_values:
                d.pop("values")
            return d
        return json.dumps({"master_seed": self.master_seed,
                           "cells": [enc(c) for c in self.cells]}, indent=2, sort_keys=True)

    def to_csv(self) -> str:
        keys = sorted({k for c in self.cells for k in c.metrics})
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["name", "task", "model", "kind", "n", "m", "pi", "replicates",
                    "n_ok", "n_failed"] + keys)
        for c in self.cells:
            w.writerow([c.name, c.task, c.model, c.kind, c.n, c.m, repr(c.pi), c.replicates,
                        c.n_ok, c.n_failed]
                       + [repr(c.metrics[k]) if k in c.metrics else "" for k in keys])
        return buf.getvalue()

    def write(self, prefix) -> Tuple[Path, Path]:
        prefix = Path(prefix)
        prefix.parent.mkdir(parents=True, exist_ok=True)
        cpath = prefix.with_name(prefix.name + ".csv")
        jpath = prefix.with_name(prefix.name + ".json")
        cpath.write_text(self.to_csv())
        jpath.write_text(self.to_json())
        return cpath, jpath


def run_experiment(cells: Sequence[Cell], replicates: int = 200, seed: int = 0,
                   workers: int = 1) -> ExperimentReport:
    """Run every cell for its replicate count and aggregate the results.

    A cell's own ``replicates`` overrides the default. Replicates that raise
    a package error are counted as failures with their message. The report
    is identical for any ``workers``.
    """
    if not cells:
        raise ConfigError("no cells to run")
    if replicates < 1:
        raise ConfigError("replicates must be >= 1")
    jobs = []
    counts = []
    for ci, cell in enumerate(cells):
        r = cell.replicates or replicates
        counts.append(r)
        jobs.extend((cell, seed, ci, rep) for rep in range(r))
    results: Dict[Tuple[int, int], tuple] = {}
    if workers <= 1:
        for job in jobs:
            ci, rep, val, err = _replicate_job(job)
            results[ci, rep] = (val, err)
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for ci, rep, val, err in pool.map(_replicate_job, jobs, chunksize=1):
                results[ci, rep] = (val, err)
    summaries = []
    for ci, cell in enumerate(cells):
        vals = [results[ci, rep][0] for rep in range(counts[ci])]
        errs = [f"replicate {rep}: {results[ci, rep][1]}" for rep in range(counts[ci])
                if results[ci, rep][1] is not None]
        s = cell.scenario
        summaries.append(CellSummary(
            name=cell.label(), task=cell.task, model=cell.model, kind=s.kind, n=s.n, m=s.m,
            pi=s.pi, replicates=counts[ci], seed_range=(0, counts[ci] - 1),
            n_ok=sum(v is not None for v in vals), n_failed=len(errs),
            metrics=_summarize(cell, vals), failures=errs, values=vals))
    return ExperimentReport(seed, summaries)


# ---------------------------------------------------------------------------
# declarative configs

_PIECE = re.compile(r"^(ones|zeros)\((\d+)\)$|^fill\((\d+),\s*([-+0-9.eE]+)\)$")


def parse_vector(value, what: str = "vector") -> tuple:
    """Literal list of numbers, or a string of comma-separated pieces such as
    ``"ones(7), zeros(8)"`` or ``"fill(3, 0.5)"``; bare numbers are allowed."""
    if isinstance(value, (int, float)):
        return (float(value),)
    if isinstance(value, list):
        try:
            return tuple(float(v) for v in value)
        except (TypeError, ValueError):
            raise ConfigError(f"{what}: list entries must be numbers") from None
    if not isinstance(value, str):
        raise ConfigError(f"{what}: expected a list or a shorthand string, got {value!r}")
    out = []
    # split on commas outside parentheses
    for piece in re.split(r",(?![^(]*\))", value):
        piece = piece.strip()
        mt = _PIECE.match(piece)
        if mt and mt.group(1):
            out.extend([1.0 if mt.group(1) == "ones" else 0.0] * int(mt.group(2)))
        elif mt:
            out.extend([float(mt.group(4))] * int(mt.group(3)))
        else:
            try:
                out.append(float(piece))
            except ValueError:
                raise ConfigError(f"{what}: cannot parse {piece!r}") from None
    return tuple(out)


_SCENARIO_KEYS = {"p", "mu_source", "mu_target_pos", "mu_target_neg", "pi", "n", "m", "kind",
                  "validation_size", "fixed_count"}
_CELL_KEYS = {"task", "model", "name", "replicates", "level", "n_starts", "tol", "label_rule",
              "warm_only"}
_EXPANDABLE = ("n", "pi", "model", "task", "mu_target_pos")


@dataclass
class ExperimentConfig:
    cells: List[Cell]
    replicates: int = 200
    seed: int = 0


def _expand(entry: dict, where: str):
    axes = []
    for key in _EXPANDABLE:
        v = entry.get(key)
        if key == "mu_target_pos":
            if isinstance(v, list) and v and all(isinstance(e, (str, list)) for e in v):
                axes.append((key, v))
        elif isinstance(v, list):
            axes.append((key, v))
    if not axes:
        yield entry
        return
    for combo in itertools.product(*(vals for _, vals in axes)):
        e = dict(entry)
        for (key, _), val in zip(axes, combo):
            e[key] = val
        yield e


def _build_cell(entry: dict, where: str) -> Cell:
    unknown = set(entry) - _SCENARIO_KEYS - _CELL_KEYS
    if unknown:
        raise ConfigError(f"{where}: unknown field(s) {sorted(unknown)}")
    if "task" not in entry:
        raise ConfigError(f"{where}: missing field 'task'")
    sc = {k: v for k, v in entry.items() if k in _SCENARIO_KEYS}
    for key in ("mu_source", "mu_target_pos", "mu_target_neg"):
        if key in sc:
            sc[key] = parse_vector(sc[key], f"{where}.{key}")
    try:
        scenario = ScenarioConfig(**sc)
        return Cell(scenario, **{k: v for k, v in entry.items() if k in _CELL_KEYS})
    except ConfigError as exc:
        raise ConfigError(f"{where}: {exc}") from None
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def parse_config(text: str) -> ExperimentConfig:
    """Parse a TOML experiment description.

    Top-level keys ``seed`` and ``replicates``, an optional ``[defaults]``
    table merged into every cell, and ``[[cells]]`` entries. List values of
    ``n``, ``pi``, ``model``, ``task`` and ``mu_target_pos`` (a list of
    vectors) expand into one cell per combination.
    """
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config is not valid TOML: {exc}") from None
    unknown = set(doc) - {"seed", "replicates", "defaults", "cells"}
    if unknown:
        raise ConfigError(f"unknown top-level field(s) {sorted(unknown)}")
    defaults = doc.get("defaults", {})
    raw = doc.get("cells", [])
    if not isinstance(raw, list) or not raw:
        raise ConfigError("no cells")
    cells = []
    for i, entry in enumerate(raw):
        merged = {**defaults, **entry}
        for e in _expand(merged, f"cells[{i}]"):
            cells.append(_build_cell(e, f"cells[{i}]"))
    reps = doc.get("replicates", 200)
    seed = doc.get("seed", 0)
    if not isinstance(reps, int) or reps < 1:
        raise ConfigError("replicates must be a positive integer")
    if not isinstance(seed, int) or seed < 0:
        raise ConfigError("seed must be a non-negative integer")
    return ExperimentConfig(cells, reps, seed)


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text)
