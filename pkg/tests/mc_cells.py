"""Shared Monte-Carlo simulation cells.

Every cell runs at most once per session and feeds all checks that need it.
Environment knobs:

``PUDETM_ACCEPTANCE_WORKERS``
    Worker processes for the simulations (default: CPU count).
``PUDETM_ACCEPTANCE_CACHE``
    Directory for pickled cell summaries, reused across sessions. Unset by
    default so that every run recomputes.
"""

import os
import pickle
import time

import numpy as np

from pudetm.simulate import Cell, ScenarioConfig, run_experiment

WORKERS = int(os.environ.get("PUDETM_ACCEPTANCE_WORKERS", os.cpu_count() or 1))
CACHE = os.environ.get("PUDETM_ACCEPTANCE_CACHE")


def budget(minutes_at_8_workers):
    return 60.0 * minutes_at_8_workers * 8 / min(max(WORKERS, 1), 8)


# name -> (cell, master seed)
CELLS = {
    "gof-null": (Cell(ScenarioConfig.scar(5000, 0.75), "gof", replicates=500), 101),
    "gof-alt": (Cell(ScenarioConfig.sar(1000, 0.75, n_shifted=1), "gof", replicates=200), 102),
    "scar-detm-n2000-pi0.3": (Cell(ScenarioConfig.scar(2000, 0.3), "estimate", replicates=200), 103),
    "sar-setm-pi0.3": (Cell(ScenarioConfig.sar(5000, 0.3), "estimate", model="SETM", replicates=200), 104),
    "sar-detm-pi0.7": (Cell(ScenarioConfig.sar(5000, 0.7), "estimate+coverage+classify",
                            replicates=200), 105),
    "scar-detm-pi0.7": (Cell(ScenarioConfig.scar(5000, 0.7), "coverage", replicates=200), 106),
    "sar-setm-pi0.7": (Cell(ScenarioConfig.sar(5000, 0.7), "coverage", model="SETM",
                            replicates=200), 107),
    "scar-detm-pi0.3-classify": (Cell(ScenarioConfig.scar(5000, 0.3), "classify", replicates=100), 108),
    "sar-detm-pi0.3-classify": (Cell(ScenarioConfig.sar(5000, 0.3), "classify", replicates=100), 109),
    "scar-l1-n1000": (Cell(ScenarioConfig.scar(1000, 0.7), "classify", replicates=100), 110),
    "scar-l1-n4000": (Cell(ScenarioConfig.scar(4000, 0.7), "classify", replicates=100), 111),
    # consistency of the estimate and the one-tilt versus two-tilt comparison
    "scar-detm-n1000-pi0.7": (Cell(ScenarioConfig.scar(1000, 0.7), "estimate", replicates=100), 112),
    "scar-detm-n2000-pi0.7": (Cell(ScenarioConfig.scar(2000, 0.7), "estimate", replicates=100), 113),
    "scar-setm-pi0.7": (Cell(ScenarioConfig.scar(5000, 0.7), "estimate", model="SETM",
                             replicates=100), 114),
    "sar-detm-n1000-pi0.7": (Cell(ScenarioConfig.sar(1000, 0.7), "estimate", replicates=100), 115),
}

_RESULTS = {}


def cell_result(name):
    """Summary and wall time of one simulation cell, computed at most once."""
    if name in _RESULTS:
        return _RESULTS[name]
    path = os.path.join(CACHE, f"{name}.pkl") if CACHE else None
    if path and os.path.exists(path):
        with open(path, "rb") as fh:
            _RESULTS[name] = pickle.load(fh)
        return _RESULTS[name]
    cell, seed = CELLS[name]
    t0 = time.perf_counter()
    report = run_experiment([cell], seed=seed, workers=WORKERS)
    out = (report.cells[0], time.perf_counter() - t0)
    if path:
        os.makedirs(CACHE, exist_ok=True)
        with open(path, "wb") as fh:
            pickle.dump(out, fh)
    _RESULTS[name] = out
    return out


def values(summary, key, first=None):
    ok = [v for v in summary.values if v is not None]
    if first is not None:
        ok = [v for v in summary.values[:first] if v is not None]
    return np.array([float(v[key]) for v in ok])


def require_complete(summary, first=None):
    vals = summary.values if first is None else summary.values[:first]
    failed = [f for f in summary.failures][:3]
    assert all(v is not None for v in vals), f"{summary.name}: failed replicates {failed}"


def elapsed(*names):
    return sum(cell_result(n)[1] for n in names)
