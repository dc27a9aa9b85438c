import json

import numpy as np
import pytest

from persuasion.exceptions import InvalidModel, UnknownFixture
from persuasion.fixtures import FIXTURE_IDS, fixture, run_fixture

FAST = [f for f in FIXTURE_IDS if f != "rs"]


@pytest.mark.parametrize("fid", FAST)
def test_fixture_passes(fid):
    rep = run_fixture(fid)
    assert rep.ok, [c for c in rep.checks if not c.passed]
    json.loads(rep.to_json())


@pytest.mark.slow
def test_rs_fixture_passes():
    rep = run_fixture("rs")
    assert rep.ok, [c for c in rep.checks if not c.passed]


@pytest.mark.parametrize("lo,hi,regime", [(0.6, 0.9, "single_peaked"), (1.1, 2.0, "full_disclosure")])
def test_contest_regimes(lo, hi, regime):
    assert fixture("contest", lo=lo, hi=hi).regime == regime
    rep = run_fixture("contest", lo=lo, hi=hi)
    assert rep.ok, [c for c in rep.checks if not c.passed]


def test_stability_limit_reports_neither():
    rep = run_fixture("stability_limit")
    assert rep.ok
    assert json.loads(rep.to_json())["notes"]["verdict"] == "neither"


def test_errors():
    with pytest.raises(UnknownFixture):
        fixture("bogus")
    with pytest.raises(InvalidModel):
        fixture("contest", lo=0.01, hi=0.5)


def test_expected_artifacts_are_callables():
    fx = fixture("e1")
    assert fx.value == pytest.approx(1 / 12, abs=1e-15)
    assert np.allclose(fx.expected["p"](np.array([0.0, 0.5, 1.0])), [0.0, 0.0, 0.25])
