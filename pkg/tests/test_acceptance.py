"""End-to-end acceptance checks, one test per criterion.

A PASS/FAIL line per criterion is printed in the terminal summary.  Run
alone with ``pytest tests/test_acceptance.py -v``; the whole file takes a
few minutes.
"""

import math
import time

import numpy as np
import pytest

from persuasion import model as M
from persuasion.contact import certificate, compute_Q, contact_set
from persuasion.fixtures import FIXTURE_IDS, contest_problem, fixture, run_fixture
from persuasion.lp import make_problem, refine_actions, solve_lp, value_under
from persuasion.nad import nad_shoot, obedience_residuals, sand_lever_assign, upper_action_mass
from persuasion.structure import pairwise_split, twist_check

pytestmark = pytest.mark.slow


def _fixture_cases():
    cases = [(f, {}) for f in FIXTURE_IDS if f != "contest"]
    cases += [("contest", {"lo": lo, "hi": hi}) for lo, hi in ((0.2, 0.5), (0.6, 0.9), (1.1, 2.0))]
    return cases


def test_strong_duality_on_every_fixture(criterion):
    criterion("1 strong duality at 201x201 on every fixture LP (gap <= 1e-8, <= 60 s each)")
    worst_gap, worst_time = 0.0, 0.0
    for fid, kw in _fixture_cases():
        fx = fixture(fid, **kw)
        t0 = time.perf_counter()
        prob = make_problem(fx.model, fx.prior, grid_a=201, grid_theta=201)
        sol = solve_lp(prob)
        dt = time.perf_counter() - t0
        dual = float(sol.dual_row_prices @ prob.prior_mass)
        worst_gap = max(worst_gap, abs(sol.value - dual))
        worst_time = max(worst_time, dt)
        assert abs(sol.value - dual) <= 1e-8, (fid, kw)
        assert dt <= 60, (fid, kw, dt)
    criterion("1 strong duality at 201x201 on every fixture LP (gap <= 1e-8, <= 60 s each)",
              f"max gap {worst_gap:.2e}, slowest {worst_time:.1f} s")


def test_three_atom_example(criterion):
    label = "2 three-atom example: value 1/12, Q(0.7) = [0.2, 0.7], contact set"
    criterion(label)
    fx = fixture("e1")
    prob = make_problem(fx.model, fx.prior, grid_a=101)
    sol = solve_lp(prob)
    assert abs(sol.value - 1 / 12) <= 1e-8
    th = prob.theta_grid
    lo, hi = compute_Q(fx.model, th, sol.dual_row_prices, 0.7)
    assert abs(lo - 0.2) <= 1e-9 and abs(hi - 0.7) <= 1e-9
    cs = contact_set(prob, certificate(prob, sol.dual_row_prices))
    want = {(float(a), float(t)) for a in prob.a_grid for t in th
            if (a <= 0.5 + 1e-12 and t in (0.0, 0.5)) or (a == 1.0 and t == 1.0)}
    assert set(cs.points()) == want
    criterion(label, f"value error {abs(sol.value - 1 / 12):.1e}, Q = [{lo:.12f}, {hi:.12f}]")


def test_reciprocal_boundaries(criterion):
    label = "3 reciprocal example: boundaries, a_hi, sand-lever vs matched 401 LP"
    criterion(label)
    fx = fixture("rs")
    sol = nad_shoot(fx.model, fx.prior, "dipped", mesh=2000)
    a = sol.a
    r = np.sqrt(np.maximum(a * a - 1, 0))
    e1 = np.max(np.abs(sol.t1 - (a - r)))
    e2 = np.max(np.abs(sol.t2 - (a + r)))
    eq = np.max(np.abs(sol.q - a))
    assert max(e1, e2, eq) <= 1e-4
    ahi = math.e / 2 + 1 / (2 * math.e)
    assert abs(sol.a_hi - ahi) <= 1e-5
    prob = make_problem(fx.model, fx.prior, grid_a=401, grid_theta=401, a_mode="matched")
    lp = solve_lp(prob)
    lever = value_under(sand_lever_assign(sol, fx.prior, fx.model, prob.theta_grid), fx.model)
    assert abs(lp.value - lever) <= 5e-3
    criterion(label, f"t1 {e1:.1e}, t2 {e2:.1e}, q {eq:.1e}, a_hi {abs(sol.a_hi - ahi):.1e}, "
                     f"LP-lever {abs(lp.value - lever):.1e}")


def test_quantile_receiver(criterion):
    label = "4 quantile receiver: upper-action mass 2(1-a), obedience <= 1e-6"
    criterion(label)
    fx = fixture("quantile", kappa=0.5)
    sol = nad_shoot(fx.model, fx.prior, mesh=2000)
    ob = float(np.max(obedience_residuals(sol, fx.model, fx.prior)))
    assert ob <= 1e-6
    out = sand_lever_assign(sol, fx.prior, fx.model)
    probe = np.linspace(0.5, 1.0, 51)
    err = max(abs(upper_action_mass(out, x) - 2 * (1 - x)) for x in probe)
    assert err <= 1e-3
    criterion(label, f"mass error {err:.1e}, obedience {ob:.1e}")


def test_segment_pair_certificate(criterion):
    label = "5 segment-pair certificate: D1 >= -1e-12, equality on segments, off-segment slack, single-dipped"
    criterion(label)
    rep = run_fixture("segpair", resolution=601)
    by = {c.name: c for c in rep.checks}
    for name in ("d1_min_residual", "d1_equality_on_gamma", "off_gamma_slack", "gamma_dippedness"):
        assert by[name].passed, by[name]
    criterion(label, f"min D1 {by['d1_min_residual'].value:.1e}, on-segment {by['d1_equality_on_gamma'].value:.1e}, "
                     f"min slack {by['off_gamma_slack'].value:.2e}")


def test_contest_thresholds(criterion):
    label = "6 contest regimes at 201x201 and twist closed form on 100 triples"
    criterion(label)
    mdl = M.contest(0.2, 2.0)
    rng = np.random.default_rng(2024)
    trip = np.sort(rng.uniform(0.2, 2.0, size=(100, 3)), axis=1)
    acts = rng.uniform(*mdl.a_bounds, size=100)
    from persuasion.structure import twist_determinant

    terr = max(abs(twist_determinant(mdl, a, *t) - M.contest_twist_closed_form(*t)) for a, t in zip(acts, trip))
    assert terr <= 1e-10
    details = []
    for lo, hi in ((1.1, 2.0), (0.2, 0.5), (0.6, 0.9)):
        rep = run_fixture("contest", resolution=201, lo=lo, hi=hi)
        assert rep.ok, [c for c in rep.checks if not c.passed]
        details.append(f"[{lo},{hi}] {rep.artifacts['regime']}")
    criterion(label, f"twist error {terr:.1e}; " + "; ".join(details))


def _random_model(rng):
    c1 = rng.uniform(0.2, 1.0)
    k = rng.choice([-1, 1]) * rng.uniform(0.5, 3)
    c2 = rng.uniform(0.2, 1.0)
    w = rng.uniform(2, 8)
    ph = rng.uniform(0, 2 * np.pi)

    def V(a, t):
        return c1 * np.asarray(a, float) * np.exp(k * np.asarray(t, float)) + c2 * np.sin(w * np.asarray(a, float) + ph)

    def v(a, t):
        a = np.asarray(a, float)
        return c1 * np.exp(k * np.asarray(t, float)) + c2 * w * np.cos(w * a + ph)

    return M.simple_receiver(V=V, v=v)


def _spread_atoms(rng, n=5, gap=0.05):
    while True:
        at = np.sort(rng.uniform(0, 1, n))
        if np.diff(at).min() >= gap:
            return at


def test_pairwise_property(criterion):
    label = "7 pairwise: 50 twisted models on 5 atoms have <= 2-state conditionals; 100 splits"
    criterion(label)
    rng = np.random.default_rng(1)
    wide = 0
    for _ in range(50):
        mdl = _random_model(rng)
        at = _spread_atoms(rng)
        assert twist_check(mdl, np.linspace(0, 1, 21), at).ok
        prob = make_problem(mdl, M.atoms_prior(at, rng.dirichlet(np.ones(5))), grid_a=101, a_mode="union")
        _, sol = refine_actions(prob, rounds=3)
        wide += any(len(t) > 2 for t, _ in sol.outcome.sections().values())
    assert wide == 0
    split_err, br_err = 0.0, 0.0
    lin = M.simple("poly", coeffs=[0.0, 1.0])
    for i in range(100):
        n = int(rng.integers(1, 7))
        theta = np.sort(rng.choice(np.linspace(0, 1, 101), size=n, replace=False))
        post = M.Posterior(theta, rng.dirichlet(np.ones(n)))
        mdl = _random_model(rng) if i % 2 else lin
        a = M.receiver_best_response(mdl, post)
        parts = pairwise_split(mdl, post)
        mix = {}
        for wt, p in parts:
            assert p.theta.size <= 2
            br_err = max(br_err, abs(M.receiver_best_response(mdl, p) - a))
            for t, m in zip(p.theta, p.weights):
                mix[float(t)] = mix.get(float(t), 0.0) + wt * m
        split_err = max(split_err, max(abs(mix[float(t)] - m) for t, m in zip(theta, post.weights)))
    assert br_err <= 1e-9 and split_err <= 1e-12
    criterion(label, f"non-pairwise models {wide}/50, best-response error {br_err:.1e}, mixture error {split_err:.1e}")


def _support_prices(fx, mode, sizes=(101, 201, 401)):
    out = {}
    for n in sizes:
        prob = make_problem(fx.model, fx.prior, grid_a=n, grid_theta=n, a_mode=mode)
        out[n] = (prob, solve_lp(prob))
    return out


def test_grid_refinement_and_bases(criterion):
    label = "8 dual prices agree across 101/201/401 (1e-3); two bases give equal action marginals (1e-6)"
    criterion(label)
    details = []
    for fid, kw, mode in (("contest", {"lo": 0.2, "hi": 0.5}, "uniform"), ("rs", {}, "matched")):
        fx = fixture(fid, **kw)
        runs = _support_prices(fx, mode)
        worst = 0.0
        for n1, n2 in ((101, 201), (101, 401), (201, 401)):
            (p1, s1), (p2, s2) = runs[n1], runs[n2]
            idx = np.searchsorted(p2.theta_grid, p1.theta_grid)
            assert np.allclose(p2.theta_grid[idx], p1.theta_grid, atol=1e-12)
            sup = p1.prior_mass > 0
            worst = max(worst, float(np.max(np.abs(s2.dual_row_prices[idx][sup] - s1.dual_row_prices[sup]))))
        assert worst <= 1e-3, (fid, worst)
        prob, s1 = runs[201]
        s2 = solve_lp(prob, column_seed=7)
        a1, m1 = s1.outcome.action_marginal()
        a2, m2 = s2.outcome.action_marginal()
        assert a1.size == a2.size and np.max(np.abs(a1 - a2)) <= 1e-6 and np.max(np.abs(m1 - m2)) <= 1e-6
        distinct = not np.array_equal(np.sort(s1.basis), np.sort(s2.basis))
        details.append(f"{fid}: price drift {worst:.1e}, marginal diff {np.max(np.abs(m1 - m2)):.1e}, "
                       f"bases {'distinct' if distinct else 'identical'}")
    criterion(label, "; ".join(details))


def test_contest_problem_grid_is_union():
    # the regime checks rely on matched actions being present on the grid
    fx = fixture("contest")
    prob = contest_problem(fx, 21)
    assert prob.a_grid.size > 21
