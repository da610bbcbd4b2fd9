"""Command-line interface: ``pudetm fit | test-scar | ci-pi | predict | simulate``.

Exit codes: 0 success, 2 bad input or configuration, 3 numerical failure.
Errors are also written to stderr as one JSON object.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import __version__
from .classify import posterior
from .core import (Dataset, FeatureMap, FitResult, LabelRule, Standardizer, Theta,
                   apply_feature_map)
from .errors import ConfigError, DataError, NumericalError, PUDETMError
from .estimation import DETM, SETM, FitOptions, fit
from .inference import ci_pi, elr_curve, gof_test_scar
from .simulate import load_config, run_experiment

log = logging.getLogger("pudetm")

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3
RESERVED = ("role", "y")


# ---------------------------------------------------------------------------
# input


def _fmt(v: float) -> str:
    return "%.17g" % v


def read_table(path) -> tuple:
    """Read a CSV into ``(header, rows)`` of strings."""
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from None
    except UnicodeDecodeError as exc:
        raise DataError(f"{path} is not UTF-8: {exc}") from None
    rows = [r for r in rows if r]
    if not rows:
        raise DataError(f"{path} is empty")
    header = [h.strip() for h in rows[0]]
    if len(set(header)) != len(header):
        raise DataError(f"{path}: duplicate column names in header")
    for i, r in enumerate(rows[1:], start=2):
        if len(r) != len(header):
            raise DataError(f"{path}: line {i} has {len(r)} fields, header has {len(header)}")
    return header, rows[1:]


def _numeric(rows, cols, header, path):
    out = np.empty((len(rows), len(cols)))
    for i, r in enumerate(rows):
        for j, c in enumerate(cols):
            try:
                out[i, j] = float(r[c])
            except ValueError:
                raise DataError(f"{path}: line {i + 2}, column {header[c]!r}: "
                                f"{r[c]!r} is not a number") from None
    return out


def read_dataset(path) -> Dataset:
    """Dataset from a CSV with a ``role`` column (``source``/``target``)."""
    header, rows = read_table(path)
    if "role" not in header:
        raise DataError(f"{path}: missing required column 'role'")
    ri = header.index("role")
    feats = [j for j, h in enumerate(header) if h not in RESERVED]
    if not feats:
        raise DataError(f"{path}: no feature columns")
    roles = [r[ri].strip() for r in rows]
    bad = [i for i, v in enumerate(roles) if v not in ("source", "target")]
    if bad:
        raise DataError(f"{path}: line {bad[0] + 2}: role must be 'source' or 'target', "
                        f"got {roles[bad[0]]!r}")
    x = _numeric(rows, feats, header, path)
    is_src = np.array([v == "source" for v in roles])
    return Dataset(x[is_src], x[~is_src], feature_names=tuple(header[j] for j in feats))


def read_features(path, names: Optional[List[str]] = None) -> tuple:
    """Feature matrix of every row, ignoring ``role`` and ``y``; returns ``(x, names)``."""
    header, rows = read_table(path)
    feats = [j for j, h in enumerate(header) if h not in RESERVED]
    got = [header[j] for j in feats]
    if names is not None and got != list(names):
        raise DataError(f"{path}: feature columns {got} do not match the model's {list(names)}")
    return _numeric(rows, feats, header, path), got


# ---------------------------------------------------------------------------
# preprocessing and model files


class Prepared:
    """Raw dataset after the feature map and optional standardization."""

    def __init__(self, raw: Dataset, fm: FeatureMap, standardize: bool):
        self.raw = raw
        self.feature_map = fm
        mapped = apply_feature_map(raw, fm)
        self.std = Standardizer.fit(mapped) if standardize else None
        self.ds = self.std.apply(mapped) if self.std else mapped


def transform_features(x, names, fm: FeatureMap, std: Optional[Standardizer]):
    out = fm.transform(x, names)
    return std.transform(out) if std is not None else out


def model_json(fr: FitResult, prep: Prepared) -> dict:
    th = fr.theta
    return {
        "model": fr.model.value,
        "p": th.p,
        "alpha1": th.alpha1,
        "alpha2": th.alpha2,
        "beta1": [float(v) for v in th.beta1],
        "beta2": [float(v) for v in th.beta2],
        "pi": th.pi,
        "feature_map": prep.feature_map.to_string(),
        "input_features": list(prep.raw.feature_names or ()),
        "standardization": None if prep.std is None else {
            "mean": [float(v) for v in prep.std.mean],
            "scale": [float(v) for v in prep.std.scale]},
        "profile_log_el": fr.profile_log_el,
        "log_el": fr.log_el,
        "lambda1": fr.lambda1,
        "lambda2": fr.lambda2,
        "label_rule": fr.label_rule.value,
        "label_switched": fr.label_switched,
        "boundary": fr.boundary,
        "converged": fr.converged,
        "n_iterations": fr.n_iterations,
        "trace": {"length": int(len(fr.trace)), "first": float(fr.trace[0]),
                  "last": float(fr.trace[-1])},
        "version": __version__,
    }


def load_model(path) -> tuple:
    """``(theta, feature_map, standardizer, input_features)`` from a model JSON."""
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise DataError(f"cannot read model {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"model {path} is not valid JSON: {exc}") from None
    try:
        th = Theta(doc["alpha1"], doc["alpha2"], doc["beta1"], doc["beta2"], doc["pi"])
        fm = FeatureMap.parse(doc.get("feature_map", "identity"))
        st = doc.get("standardization")
        std = None if st is None else Standardizer(np.array(st["mean"]), np.array(st["scale"]))
        names = doc.get("input_features") or None
    except (KeyError, TypeError) as exc:
        raise DataError(f"model {path} lacks a valid field: {exc}") from None
    if th.p != doc.get("p", th.p):
        raise DataError(f"model {path}: p={doc['p']} but beta has length {th.p}")
    return th, fm, std, names


# ---------------------------------------------------------------------------
# output


def _flatten(d: dict, prefix="") -> list:
    rows = []
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            rows.extend(_flatten(v, key + "."))
        elif isinstance(v, (list, tuple)):
            for i, e in enumerate(v):
                if isinstance(e, (list, tuple)):
                    rows.extend((f"{key}[{i}][{j}]", f) for j, f in enumerate(e))
                else:
                    rows.append((f"{key}[{i}]", e))
        else:
            rows.append((key, v))
    return rows


def _cell(v) -> str:
    if isinstance(v, float):
        return _fmt(v)
    if v is None:
        return ""
    return str(v)


def emit(doc: dict, fmt: str, stream=None):
    stream = stream or sys.stdout
    if fmt == "json":
        stream.write(json.dumps(doc, indent=2) + "\n")
        return
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(["field", "value"])
    for k, v in _flatten(doc):
        w.writerow([k, _cell(v)])


def write_curve(path, points):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["pi", "elr"])
    for pi, r in points:
        w.writerow([_fmt(pi), _fmt(r)])
    Path(path).write_text(buf.getvalue())


# ---------------------------------------------------------------------------
# commands


def _options(args, fixed_pi=None) -> FitOptions:
    return FitOptions(tol=args.tol, n_starts=args.starts, seed=args.seed,
                      label_rule=LabelRule(args.label_rule), fixed_pi=fixed_pi)


def _prepare(args) -> Prepared:
    return Prepared(read_dataset(args.input), FeatureMap.parse(args.feature_map),
                    args.standardize)


def _spec(name):
    return SETM if name == "setm" else DETM


def cmd_fit(args) -> int:
    prep = _prepare(args)
    fr = fit(prep.ds, _spec(args.model), _options(args, args.fixed_pi))
    doc = model_json(fr, prep)
    if args.out:
        Path(args.out).write_text(json.dumps(doc, indent=2) + "\n")
        if not args.quiet:
            log.info("model written to %s", args.out)
    else:
        emit(doc, args.output)
    return EXIT_OK


def cmd_test_scar(args) -> int:
    prep = _prepare(args)
    tr = gof_test_scar(prep.ds, _options(args))
    doc = {"statistic": tr.statistic, "df": tr.df, "p_value": tr.p_value,
           "decision": tr.decision, "reject_at_0_05": tr.reject_at_0_05,
           "profile_log_el_full": tr.fit_full.profile_log_el,
           "profile_log_el_null": tr.fit_null.profile_log_el,
           "pi_full": tr.fit_full.pi, "pi_null": tr.fit_null.pi,
           "feature_map": prep.feature_map.to_string(), "version": __version__}
    emit(doc, args.output)
    return EXIT_OK


def parse_grid(text: str) -> list:
    try:
        lo, hi, num = text.split(":")
        lo, hi, num = float(lo), float(hi), int(num)
    except ValueError:
        raise ConfigError(f"--grid must look like lo:hi:num, got {text!r}") from None
    if not (0.0 < lo <= hi < 1.0) or num < 1:
        raise ConfigError(f"--grid needs 0 < lo <= hi < 1 and num >= 1, got {text!r}")
    return list(np.linspace(lo, hi, num)) if num > 1 else [lo]


def cmd_ci_pi(args) -> int:
    prep = _prepare(args)
    opts = _options(args)
    ci = ci_pi(prep.ds, args.level, opts, spec=_spec(args.model))
    warnings = []
    if ci.lower_open:
        warnings.append("lower end reached the search boundary")
    if ci.upper_open:
        warnings.append("upper end reached the search boundary")
    doc = {"lower": ci.lower, "upper": ci.upper, "level": ci.level, "pi_hat": ci.pi_hat,
           "critical_value": ci.critical_value, "lower_open": ci.lower_open,
           "upper_open": ci.upper_open, "warning": "; ".join(warnings) or None,
           "model": ci.fit.model.value, "version": __version__}
    if args.curve:
        if args.grid:
            grid = parse_grid(args.grid)
        else:
            w = max(ci.upper - ci.lower, 0.01)
            grid = list(np.linspace(max(1e-3, ci.lower - w), min(1 - 1e-3, ci.upper + w), 41))
        pts = elr_curve(prep.ds, grid, opts, full=ci.fit)
        write_curve(args.curve, pts)
        doc["curve"] = str(args.curve)
    emit(doc, args.output)
    return EXIT_OK


def cmd_predict(args) -> int:
    th, fm, std, names = load_model(args.model_json)
    x, got = read_features(args.input, names)
    feats = transform_features(x, got, fm, std)
    if feats.shape[1] != th.p:
        raise DataError(f"features map to {feats.shape[1]} columns but the model has p={th.p}")
    phi = np.atleast_1d(posterior(th, feats))
    out = sys.stdout if not args.out else open(args.out, "w", newline="", encoding="utf-8")
    try:
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["row_id", "phi", "label"])
        for i, f in enumerate(phi):
            w.writerow([i, _fmt(f), int(f > args.threshold)])
    finally:
        if out is not sys.stdout:
            out.close()
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    reps = args.replicates or cfg.replicates
    seed = args.seed if args.seed_given else cfg.seed
    report = run_experiment(cfg.cells, replicates=reps, seed=seed, workers=args.threads)
    cpath, jpath = report.write(args.out)
    if not args.quiet:
        sys.stdout.write(report.to_csv())
    log.info("wrote %s and %s", cpath, jpath)
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


class _SeedAction(argparse.Action):
    def __call__(self, parser, namespace, values, option_string=None):
        setattr(namespace, self.dest, values)
        namespace.seed_given = True


def _global_options() -> argparse.ArgumentParser:
    g = argparse.ArgumentParser(add_help=False)
    g.add_argument("--seed", type=int, default=0, action=_SeedAction,
                   help="seed for random starts and simulations (default 0)")
    g.add_argument("--threads", type=int, default=None,
                   help="worker processes for simulate (default $PUDETM_THREADS or 1)")
    g.add_argument("--tol", type=float, default=1e-6, help="EM log-EL increment tolerance")
    g.add_argument("--starts", type=int, default=10, help="EM starting values")
    g.add_argument("--label-rule", choices=[r.value for r in LabelRule], default="kl_rule")
    g.add_argument("--feature-map", default="identity",
                   help="identity | poly:D | cols:EXPR;EXPR;... (default identity)")
    g.add_argument("--standardize", action="store_true",
                   help="center and scale mapped features before fitting")
    g.add_argument("--output", choices=["json", "csv"], default="json")
    g.add_argument("--quiet", action="store_true", help="suppress informational messages")
    return g


def build_parser() -> argparse.ArgumentParser:
    g = _global_options()
    p = argparse.ArgumentParser(prog="pudetm", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    f = sub.add_parser("fit", parents=[g], help="fit DETM or SETM by EM")
    f.add_argument("input", help="CSV with a role column")
    f.add_argument("--model", choices=["detm", "setm"], default="detm")
    f.add_argument("--fixed-pi", type=float, default=None)
    f.add_argument("--out", help="write the model JSON here instead of stdout")
    f.set_defaults(func=cmd_fit)

    t = sub.add_parser("test-scar", parents=[g], help="goodness-of-fit test of SCAR")
    t.add_argument("input")
    t.set_defaults(func=cmd_test_scar)

    c = sub.add_parser("ci-pi", parents=[g], help="ELR confidence interval for pi")
    c.add_argument("input")
    c.add_argument("--level", type=float, default=0.95)
    c.add_argument("--model", choices=["detm", "setm"], default="detm")
    c.add_argument("--curve", help="write the (pi, elr) curve CSV here")
    c.add_argument("--grid", help="curve grid lo:hi:num (default around the interval)")
    c.set_defaults(func=cmd_ci_pi)

    r = sub.add_parser("predict", parents=[g], help="posterior and labels from a model JSON")
    r.add_argument("model_json")
    r.add_argument("input", help="CSV of features (role and y columns are ignored)")
    r.add_argument("--threshold", type=float, default=0.5)
    r.add_argument("--out", help="write predictions here instead of stdout")
    r.set_defaults(func=cmd_predict)

    s = sub.add_parser("simulate", parents=[g], help="run a Monte-Carlo experiment config")
    s.add_argument("config", help="TOML experiment file")
    s.add_argument("--out", default="report", help="output prefix for .csv and .json")
    s.add_argument("--replicates", type=int, default=None)
    s.set_defaults(func=cmd_simulate)
    return p


def _resolve_threads(args):
    if args.threads is None:
        env = os.environ.get("PUDETM_THREADS", "").strip()
        if env:
            try:
                args.threads = int(env)
            except ValueError:
                raise ConfigError(f"PUDETM_THREADS must be an integer, got {env!r}") from None
        else:
            args.threads = 1
    if args.threads < 1:
        raise ConfigError("--threads must be >= 1")


def _validate(args):
    _resolve_threads(args)
    if args.tol <= 0:
        raise ConfigError("--tol must be positive")
    if args.starts < 1:
        raise ConfigError("--starts must be >= 1")
    FeatureMap.parse(args.feature_map)
    if getattr(args, "level", None) is not None and not (0.5 <= args.level < 1.0):
        raise ConfigError(f"--level must lie in [0.5, 1), got {args.level}")
    if getattr(args, "fixed_pi", None) is not None and not (0.0 < args.fixed_pi < 1.0):
        raise ConfigError(f"--fixed-pi must lie in (0, 1), got {args.fixed_pi}")
    if getattr(args, "grid", None):
        parse_grid(args.grid)


def _error(kind: str, exc: Exception) -> None:
    sys.stderr.write(json.dumps({"error": kind, "type": type(exc).__name__,
                                 "message": str(exc)}) + "\n")


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors, matching the input-error code
        return int(exc.code or 0)
    if not hasattr(args, "seed_given"):
        args.seed_given = False
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.WARNING,
                        format="%(levelname)s: %(message)s", stream=sys.stderr)
    try:
        _validate(args)
        return args.func(args)
    except NumericalError as exc:
        _error("numerical", exc)
        return EXIT_NUMERIC
    except (PUDETMError, ValueError) as exc:
        _error("input", exc)
        return EXIT_INPUT


def main_entry() -> None:
    sys.exit(main())


if __name__ == "__main__":  # pragma: no cover
    main_entry()
