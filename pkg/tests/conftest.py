import warnings

import numpy as np
import pytest


@pytest.fixture(autouse=True)
def _quiet_numpy():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        yield


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_CRITERIA: dict[str, tuple[bool, str, str]] = {}


@pytest.fixture
def criterion(request):
    """Record a named acceptance criterion; the outcome follows the test's own result."""
    box = {}

    def record(label, detail=""):
        box["label"], box["detail"] = label, detail

    yield record
    if "label" in box:
        rep = getattr(request.node, "rep_call", None)
        _CRITERIA[request.node.nodeid] = (rep is not None and rep.passed, box["label"], box["detail"])


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call":
        item.rep_call = rep


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for ok, label, detail in _CRITERIA.values():
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {label}" + (f"  [{detail}]" if detail else ""))
