import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from pudetm.core import Dataset  # noqa: E402

# acceptance key -> [title, outcomes, details]
_ACCEPTANCE = {}
_ORDER = []


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(key, title): acceptance target reported in the summary")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        key, title = mark.args
        if key not in _ACCEPTANCE:
            _ACCEPTANCE[key] = [title, [], []]
            _ORDER.append(key)
        entry = _ACCEPTANCE[key]
        entry[1].append(rep.outcome)
        entry[2].extend(v for k, v in item.user_properties if k == "detail")


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance targets")
    for key in sorted(_ORDER):
        title, outcomes, details = _ACCEPTANCE[key]
        if "failed" in outcomes:
            status = "FAIL"
        elif all(o == "skipped" for o in outcomes):
            status = "SKIP"
        else:
            status = "PASS"
        tr.write_line(f"{status:4s}  {key}  {title}")
        for d in details:
            tr.write_line(f"        {d}")


@pytest.fixture
def detail(record_property):
    """Attach a one-line measurement to the acceptance summary."""
    def add(text):
        record_property("detail", text)
    return add


def make_dataset(rng, n=200, m=300, p=2, pi=0.6, shift=1.0, sar_shift=0.0):
    """Small normal PU sample: source N(0, I); target positives N(sar_shift e1, I),
    negatives N(shift 1, I)."""
    src = rng.normal(size=(n, p))
    npos = rng.binomial(m, pi)
    pos = rng.normal(size=(npos, p))
    pos[:, 0] += sar_shift
    neg = rng.normal(size=(m - npos, p)) + shift
    return Dataset(src, np.vstack([pos, neg]))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_ds():
    return make_dataset(np.random.default_rng(7))


@pytest.fixture(scope="session")
def sar_ds():
    return make_dataset(np.random.default_rng(8), n=400, m=400, p=2, pi=0.5, shift=2.0,
                        sar_shift=1.5)
