import math
from dataclasses import replace

import numpy as np
import pytest

from persuasion import model as M
from persuasion.exceptions import PreconditionFailure, PriorHasAtoms
from persuasion.fixtures import contest_prior, fixture
from persuasion.lp import value_under
from persuasion.nad import (
    NadSolution,
    nad_rhs,
    nad_shoot,
    nad_verify,
    obedience_residuals,
    sand_lever_assign,
    upper_action_mass,
)


@pytest.fixture(scope="module")
def rs_solution():
    fx = fixture("rs")
    return fx, nad_shoot(fx.model, fx.prior, "dipped", mesh=2000)


def test_rs_boundaries_match_closed_form(rs_solution):
    fx, sol = rs_solution
    a = sol.a
    assert np.max(np.abs(sol.t1 - fx.expected["t1"](a))) <= 1e-4
    assert np.max(np.abs(sol.t2 - fx.expected["t2"](a))) <= 1e-4
    assert abs(sol.a_hi - (math.e / 2 + 1 / (2 * math.e))) <= 1e-5
    assert abs(sol.a_lo - 1.0) <= 1e-4
    assert nad_verify(sol, fx.model, fx.prior).ok


def test_rhs_matches_slope_of_closed_form_boundaries():
    fx = fixture("rs")
    h = 1e-6
    for a in (1.2, 1.4):
        d1, d2 = nad_rhs(fx.model, fx.prior, a, *(fx.expected[k](a) for k in ("t1", "t2")))
        fd1 = (fx.expected["t1"](a + h) - fx.expected["t1"](a - h)) / (2 * h)
        fd2 = (fx.expected["t2"](a + h) - fx.expected["t2"](a - h)) / (2 * h)
        assert d1 == pytest.approx(fd1, rel=1e-4)
        assert d2 == pytest.approx(fd2, rel=1e-4)


def test_sand_lever_outcome_is_obedient(rs_solution):
    fx, sol = rs_solution
    out = sand_lever_assign(sol, fx.prior, fx.model)
    assert np.max(np.abs(out.obedience_residuals(fx.model))) <= 1e-12
    _, mass = out.state_marginal()
    assert mass.sum() == pytest.approx(1.0, abs=1e-12)
    assert value_under(out, fx.model) == pytest.approx(fx.expected["value"](), abs=5e-3)


def test_quantile_closed_form():
    fx = fixture("quantile")
    sol = nad_shoot(fx.model, fx.prior)
    assert sol.a_lo == pytest.approx(0.5, abs=1e-12)
    assert np.max(np.abs(sol.t1 - fx.expected["t1"](sol.a))) <= 1e-6
    assert np.max(obedience_residuals(sol, fx.model, fx.prior)) <= 1e-6
    out = sand_lever_assign(sol, fx.prior, fx.model)
    for a in (0.6, 0.8):
        assert upper_action_mass(out, a) == pytest.approx(float(fx.expected["upper_mass"](a)), abs=1e-3)


def test_atoms_rejected():
    fx = fixture("e1")
    with pytest.raises(PriorHasAtoms):
        nad_shoot(fx.model, fx.prior)


def test_bad_orientation():
    fx = fixture("rs")
    with pytest.raises(ValueError):
        nad_shoot(fx.model, fx.prior, orientation="sideways")


def test_preconditions_reject_wrong_orientation():
    mdl = M.contest(0.6, 0.9)
    with pytest.raises(PreconditionFailure):
        nad_shoot(mdl, contest_prior(0.6, 0.9), "dipped", check_preconditions=True)


def test_rhs_at_the_centre_of_a_symmetric_problem():
    # symmetric density with u = theta - a: obedience alone forces t1' = -t2'
    mdl = M.linear_in_action("power", exponent=2.0)
    d1, d2 = nad_rhs(mdl, M.density_prior("uniform", (0.0, 1.0)), 0.5, 0.3, 0.7)
    assert d1 == pytest.approx(-d2, rel=1e-9)


def test_rs_solution_is_symmetric_under_inversion(rs_solution):
    # the reciprocal density is invariant under theta -> 1/theta, so t1 t2 = 1
    _, sol = rs_solution
    assert np.max(np.abs(sol.t1 * sol.t2 - 1)) <= 1e-4


def test_multiplier_slope_is_minus_the_secant(rs_solution):
    fx, sol = rs_solution
    v = fx.model.v
    secant = (v(sol.a, sol.t2) - v(sol.a, sol.t1)) / (sol.t2 - sol.t1)
    qp = np.gradient(sol.q, sol.a)
    inner = slice(5, -5)
    assert np.max(np.abs(qp[inner] + secant[inner])) <= 1e-3


def test_orientation_monotone(rs_solution):
    _, sol = rs_solution
    assert np.all(np.diff(sol.t1) < 0) and np.all(np.diff(sol.t2) > 0)


def test_verify_flags_injected_error(rs_solution):
    fx, sol = rs_solution
    bad = replace(sol, t2=sol.t2 + 0.01)
    rep = nad_verify(bad, fx.model, fx.prior)
    assert not rep.ok and rep.obedience > 1e-3


def test_sand_lever_full_disclosure_is_identity():
    mdl = M.linear_in_action("power", exponent=1.0)
    prior = M.density_prior("uniform", (0.0, 1.0))
    a = np.linspace(0.0, 1.0, 11)
    sol = NadSolution(a_lo=0.0, a_hi=1.0, a=a, t1=a.copy(), t2=a.copy(), q=np.zeros_like(a), h=0.1,
                      orientation="dipped", residual=0.0, method="given")
    grid = np.linspace(0.0, 1.0, 21)
    out = sand_lever_assign(sol, prior, mdl, grid)
    assert np.allclose(out.a, out.theta, atol=1e-12)
