import numpy as np
import pytest

from persuasion import model as M
from persuasion.contact import (
    certificate,
    compute_Q,
    contact_set,
    d1_residuals,
    fixed_certificate,
    foc_residual,
    q_closed_form,
    verify_support_optimality,
)
from persuasion.exceptions import DegeneratePair, EmptyQ
from persuasion.fixtures import fixture
from persuasion.lp import make_problem, solve_lp


def _brute_Q(model, theta, p, a, grid):
    ok = [np.all(p - model.V(a, theta) - q * model.u(a, theta) >= -1e-12) for q in grid]
    inside = grid[np.array(ok)]
    return inside.min(), inside.max()


@pytest.mark.parametrize("a", [0.55, 0.7, 0.9])
def test_compute_Q_matches_brute_force_scan(a):
    fx = fixture("e1")
    th = fx.prior.atoms
    p = fx.model.V(th, th)
    grid = np.linspace(-1, 2, 30001)
    lo, hi = compute_Q(fx.model, th, p, a)
    blo, bhi = _brute_Q(fx.model, th, p, a, grid)
    assert lo == pytest.approx(blo, abs=2e-4) and hi == pytest.approx(bhi, abs=2e-4)
    assert (lo, hi) == pytest.approx(fx.expected["Q"](a), abs=1e-12)


def test_compute_Q_empty_for_infeasible_prices():
    fx = fixture("e1")
    th = fx.prior.atoms
    with pytest.raises(EmptyQ):
        compute_Q(fx.model, th, np.full(3, -5.0), 0.7)


def test_q_closed_form_solves_the_two_first_order_conditions():
    mdl = fixture("rs").model
    a, t1, t2 = 1.4, 0.7, 2.1
    q, qp = q_closed_form(mdl, a, t1, t2)
    Mx = np.array([[mdl.u_a(a, t1), mdl.u(a, t1)], [mdl.u_a(a, t2), mdl.u(a, t2)]], dtype=float)
    rhs = -np.array([mdl.v(a, t1), mdl.v(a, t2)], dtype=float)
    assert np.allclose([q, qp], np.linalg.solve(Mx, rhs), rtol=1e-12, atol=1e-12)
    with pytest.raises(DegeneratePair):
        q_closed_form(mdl, a, 0.9, 0.9)


def test_rs_multiplier_equals_action_on_matched_pairs():
    mdl = fixture("rs").model
    for a in (1.1, 1.3, 1.5):
        r = np.sqrt(a * a - 1)
        q, _ = q_closed_form(mdl, a, a - r, a + r)
        assert q == pytest.approx(a, rel=1e-10)


def test_lp_certificate_verifies_e1():
    fx = fixture("e1")
    prob = make_problem(fx.model, fx.prior, grid_a=101)
    sol = solve_lp(prob)
    cert = certificate(prob, sol.dual_row_prices)
    assert np.nanmin(d1_residuals(prob, cert)) >= -1e-9
    rep = verify_support_optimality(prob, sol.outcome, cert)
    assert rep.ok and abs(rep.gap) <= 1e-8
    cs = contact_set(prob, cert)
    A, T = np.meshgrid(prob.a_grid, prob.theta_grid, indexing="ij")
    assert np.array_equal(cs.in_gamma, fx.expected["gamma"](A, T))


def test_fixed_certificate_with_closed_form_duals():
    fx = fixture("e1")
    prob = make_problem(fx.model, fx.prior, grid_a=101)
    cert = fixed_certificate(prob, fx.expected["p"](prob.theta_grid), fx.expected["q"](prob.a_grid))
    assert np.nanmin(d1_residuals(prob, cert)) >= -1e-12
    with pytest.raises(ValueError):
        fixed_certificate(prob, np.zeros(2), np.zeros(prob.a_grid.size))


def test_gamma_star_keeps_indifference_endpoint():
    fx = fixture("foc_counterexample")
    prob = make_problem(fx.model, fx.prior, grid_a=61)
    cert = certificate(prob, np.zeros(3))
    cs = contact_set(prob, cert)
    i0 = int(np.searchsorted(prob.a_grid, 0.0))
    assert cs.section(i0, star=True).tolist() == [0.0]
    assert len(cs.section(i0)) == 3


def test_foc_residual_vanishes_along_rs_boundary():
    fx = fixture("rs")
    mdl = fx.model
    prob = make_problem(mdl, M.atoms_prior([0.5, 1.0, 2.0]), grid_a=401)
    a = prob.a_grid
    cert = fixed_certificate(prob, np.zeros(3), a.copy())
    for x in (1.2, 1.4):
        r = np.sqrt(x * x - 1)
        for t in (x - r, x + r):
            assert abs(foc_residual(mdl, cert, x, t)) <= 1e-6
