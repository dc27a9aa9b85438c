"""Dual certificates, multiplier intervals and the contact set.

Given state prices ``p`` on the prior's support nodes, the admissible
multipliers at action ``a`` form the interval

    Q(a) = { r : p(t) >= V(a, t) + r u(a, t) for every support node t }.

A certificate picks one ``q(a)`` from each interval.  The contact set
collects the node pairs where the inequality binds, and its refinement keeps
only the indifference state when that state is an endpoint of the section.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .exceptions import DegeneratePair, EmptyQ
from .lp import DiscreteProblem, Outcome, value_under
from .model import PreferenceModel, theta_star_many

EMPTY_Q_TOL = 1e-8
D1_TOL = 1e-8
FOC_TOL = 1e-4
PAIR_TOL = 1e-10
ENDPOINT_TOL = 1e-9


def gamma_tolerance(V: np.ndarray) -> float:
    """Membership tolerance for the contact set, relative to max |V|."""
    return 1e-7 * (1.0 + float(np.max(np.abs(V))))


def _q_bounds(model: PreferenceModel, theta: np.ndarray, p: np.ndarray, a: np.ndarray):
    """Vectorised Q(a) endpoints over support nodes ``theta``; also the u=0 check."""
    A = a[:, None]
    T = theta[None, :]
    U = model.u(A, T)
    gap = p[None, :] - model.V(A, T)
    band = 1e-9 * (1 + np.abs(U).max(axis=1, keepdims=True))
    neg = U < -band
    pos = U > band
    with np.errstate(divide="ignore", invalid="ignore"):
        lo = np.where(neg, gap / U, -np.inf).max(axis=1)
        hi = np.where(pos, gap / U, np.inf).min(axis=1)
    zero_gap = np.where(~neg & ~pos, gap, np.inf).min(axis=1)
    return lo, hi, zero_gap


def compute_Q(model: PreferenceModel, theta, p, a: float) -> tuple[float, float]:
    """Interval of multipliers keeping (p, r) dual feasible at action ``a``.

    ``theta`` and ``p`` should list prior-support nodes only.  Unbounded
    sides come back as infinities.  Raises :class:`EmptyQ`.
    """
    lo, hi, zg = _q_bounds(model, np.asarray(theta, float), np.asarray(p, float), np.array([float(a)]))
    lo, hi, zg = float(lo[0]), float(hi[0]), float(zg[0])
    if lo > hi + EMPTY_Q_TOL or zg < -EMPTY_Q_TOL:
        raise EmptyQ("no multiplier makes the prices dual feasible", a=float(a), lo=lo, hi=hi)
    return lo, hi


@dataclass
class DualCertificate:
    theta_grid: np.ndarray
    p: np.ndarray
    support: np.ndarray
    a_grid: np.ndarray
    q: np.ndarray
    Q_lo: np.ndarray
    Q_hi: np.ndarray
    rule: list
    eps_gamma: float
    theta_star: np.ndarray = field(default=None, repr=False)

    def q_at(self, a):
        return np.interp(a, self.a_grid, self.q)

    def q_prime_at(self, a):
        g = np.gradient(self.q, self.a_grid) if self.a_grid.size > 1 else np.zeros(1)
        return np.interp(a, self.a_grid, g)

    def p_at(self, theta):
        return np.interp(theta, self.theta_grid, self.p)

    def price_rows(self):
        return [(float(t), float(v)) for t, v in zip(self.theta_grid, self.p)]

    def multiplier_rows(self):
        return [
            (float(a), float(q), float(lo), float(hi), r)
            for a, q, lo, hi, r in zip(self.a_grid, self.q, self.Q_lo, self.Q_hi, self.rule)
        ]


def _half_steps(grid: np.ndarray) -> np.ndarray:
    if grid.size == 1:
        return np.array([np.inf])
    d = np.diff(grid)
    left = np.concatenate(([np.inf], d))
    right = np.concatenate((d, [np.inf]))
    return 0.5 * np.minimum(left, right)


def select_q(
    model: PreferenceModel,
    theta,
    p,
    a: float,
    Q: tuple[float, float],
    eps_gamma: float,
    bound: Optional[float] = None,
) -> tuple[float, str]:
    """Pick one multiplier from Q(a).

    If the indifference state sits (within half a grid step) on a support
    node whose price equals V there, use -v/u_a at the indifference state;
    otherwise take the midpoint of Q(a), with infinite ends clipped to
    ``+-bound``.
    """
    q, rule = _select_many(model, np.asarray(theta, float), np.asarray(p, float), np.array([float(a)]),
                           np.array([Q[0]]), np.array([Q[1]]), eps_gamma, bound)
    return float(q[0]), rule[0]


def _select_many(model, theta, p, a, lo, hi, eps_gamma, bound=None):
    if bound is None:
        finite = np.concatenate([lo[np.isfinite(lo)], hi[np.isfinite(hi)]])
        bound = 2.0 * max(float(np.max(np.abs(finite))) if finite.size else 0.0, 1.0)
    lo_c = np.where(np.isfinite(lo), lo, -bound)
    hi_c = np.where(np.isfinite(hi), hi, bound)
    hi_c = np.maximum(hi_c, lo_c)
    mid = 0.5 * (lo_c + hi_c)
    ts = theta_star_many(model, a)
    half = _half_steps(theta)
    q = mid.copy()
    rule = ["midpoint"] * a.size
    ok = np.isfinite(ts)
    if ok.any() and model.family != "quantile":
        j = np.clip(np.searchsorted(theta, ts[ok]), 0, theta.size - 1)
        jl = np.clip(j - 1, 0, theta.size - 1)
        j = np.where(np.abs(theta[jl] - ts[ok]) < np.abs(theta[j] - ts[ok]), jl, j)
        idx = np.nonzero(ok)[0]
        near = np.abs(theta[j] - ts[ok]) <= half[j]
        binds = np.abs(p[j] - model.V(a[idx], theta[j])) <= eps_gamma
        with np.errstate(divide="ignore", invalid="ignore"):
            cand = -model.v(a[idx], ts[ok]) / model.u_a(a[idx], ts[ok])
        tol = EMPTY_Q_TOL * (1 + np.abs(cand))
        inside = (cand >= lo_c[idx] - tol) & (cand <= hi_c[idx] + tol) & np.isfinite(cand)
        use = near & binds & inside
        q[idx[use]] = np.clip(cand[use], lo_c[idx[use]], hi_c[idx[use]])
        for k in idx[use]:
            rule[k] = "type1_contact"
    return q, rule


def certificate(problem: DiscreteProblem, p, eps_gamma: Optional[float] = None, strict: bool = True) -> DualCertificate:
    """Build a full certificate on the problem's action grid from prices ``p``."""
    p = np.asarray(p, dtype=float)
    sup = problem.support
    theta_s, p_s = problem.theta_grid[sup], p[sup]
    if eps_gamma is None:
        eps_gamma = gamma_tolerance(problem.V)
    a = problem.a_grid
    lo, hi, zg = _q_bounds(problem.model, theta_s, p_s, a)
    bad = (lo > hi + EMPTY_Q_TOL) | (zg < -EMPTY_Q_TOL)
    if strict and bad.any():
        k = int(np.argmax(bad))
        raise EmptyQ("no multiplier makes the prices dual feasible", a=float(a[k]), lo=float(lo[k]), hi=float(hi[k]))
    q, rule = _select_many(problem.model, theta_s, p_s, a, lo, hi, eps_gamma)
    return DualCertificate(
        theta_grid=problem.theta_grid,
        p=p,
        support=sup,
        a_grid=a,
        q=q,
        Q_lo=lo,
        Q_hi=hi,
        rule=rule,
        eps_gamma=eps_gamma,
        theta_star=theta_star_many(problem.model, a),
    )


def d1_residuals(problem: DiscreteProblem, cert: DualCertificate) -> np.ndarray:
    """p(t) - V(a, t) - q(a) u(a, t) on the full grid (NaN off the prior support)."""
    r = cert.p[None, :] - problem.V - cert.q[:, None] * problem.U
    return np.where(problem.support[None, :], r, np.nan)


@dataclass
class ContactSet:
    a_grid: np.ndarray
    theta_grid: np.ndarray
    in_gamma: np.ndarray
    in_gamma_star: np.ndarray

    def points(self, star: bool = False) -> list[tuple[float, float]]:
        M = self.in_gamma_star if star else self.in_gamma
        i, j = np.nonzero(M)
        return [(float(self.a_grid[x]), float(self.theta_grid[y])) for x, y in zip(i, j)]

    def section(self, a_index: int, star: bool = False) -> np.ndarray:
        M = self.in_gamma_star if star else self.in_gamma
        return self.theta_grid[M[a_index]]

    def rows(self):
        i, j = np.nonzero(self.in_gamma)
        return [
            (float(self.a_grid[x]), float(self.theta_grid[y]), 1, int(self.in_gamma_star[x, y]))
            for x, y in zip(i, j)
        ]


def contact_set(problem: DiscreteProblem, cert: DualCertificate) -> ContactSet:
    """Binding pairs of the certificate and their refinement."""
    r = d1_residuals(problem, cert)
    G = np.nan_to_num(r, nan=np.inf) <= cert.eps_gamma
    star = G.copy()
    ts = cert.theta_star
    span = problem.theta_grid[-1] - problem.theta_grid[0] if problem.theta_grid.size > 1 else 1.0
    for i in range(problem.a_grid.size):
        sec = np.nonzero(G[i])[0]
        if sec.size == 0 or not np.isfinite(ts[i]):
            continue
        ends = problem.theta_grid[[sec[0], sec[-1]]]
        hit = np.abs(ends - ts[i]) <= ENDPOINT_TOL * (1 + span)
        if hit.any():
            keep = sec[0] if hit[0] else sec[-1]
            star[i] = False
            star[i, keep] = True
    return ContactSet(problem.a_grid, problem.theta_grid, G, star)


def q_closed_form(model: PreferenceModel, a: float, t1: float, t2: float) -> tuple[float, float]:
    """Multiplier and its derivative pinned by first-order conditions at two states.

    Raises :class:`DegeneratePair` when the two states coincide.
    """
    if abs(t2 - t1) < PAIR_TOL:
        raise DegeneratePair("states too close to pin the multiplier", t1=t1, t2=t2)
    q, qp = q_pair(model, a, t1, t2)
    return float(q), float(qp)


def q_pair(model: PreferenceModel, a, t1, t2):
    """Vectorised closed-form (q, q') without the degeneracy guard."""
    v1, v2 = model.v(a, t1), model.v(a, t2)
    u1, u2 = model.u(a, t1), model.u(a, t2)
    g1, g2 = model.u_a(a, t1), model.u_a(a, t2)
    with np.errstate(divide="ignore", invalid="ignore"):
        q = (v1 * u2 - v2 * u1) / (u1 * g2 - u2 * g1)
        qp = (v1 * g2 - v2 * g1) / (g1 * u2 - g2 * u1)
    return q, qp


def foc_residual(model: PreferenceModel, cert: DualCertificate, a: float, theta: float) -> float:
    """v + q u_a + q' u at (a, theta), with q' from central differences of q."""
    q = cert.q_at(a)
    qp = cert.q_prime_at(a)
    return float(model.v(a, theta) + q * model.u_a(a, theta) + qp * model.u(a, theta))


@dataclass
class VerifyReport:
    ok: bool
    min_residual: float
    max_support_residual: float
    violations: list
    primal_value: float
    dual_value: float

    @property
    def gap(self) -> float:
        return self.primal_value - self.dual_value

    def to_dict(self):
        return {
            "ok": self.ok,
            "min_d1_residual": self.min_residual,
            "max_support_residual": self.max_support_residual,
            "violations": [list(map(float, v)) for v in self.violations[:50]],
            "n_violations": len(self.violations),
            "primal_value": self.primal_value,
            "dual_value": self.dual_value,
            "gap": self.gap,
        }


def verify_support_optimality(problem: DiscreteProblem, outcome: Outcome, cert: DualCertificate) -> VerifyReport:
    """Check dual feasibility on the grid and that every support point binds."""
    model = problem.model
    r = d1_residuals(problem, cert)
    min_r = float(np.nanmin(r))
    a, t = outcome.a, outcome.theta
    on_grid = np.isin(a, cert.a_grid)
    qa = np.empty(a.size)
    qa[on_grid] = cert.q[np.searchsorted(cert.a_grid, a[on_grid])]
    if (~on_grid).any():
        sup = cert.support
        lo, hi, _ = _q_bounds(model, cert.theta_grid[sup], cert.p[sup], a[~on_grid])
        qa[~on_grid], _ = _select_many(model, cert.theta_grid[sup], cert.p[sup], a[~on_grid], lo, hi, cert.eps_gamma)
    res = cert.p_at(t) - model.V(a, t) - qa * model.u(a, t)
    bad = np.abs(res) > cert.eps_gamma
    viol = [(float(x), float(y), float(z)) for x, y, z in zip(a[bad], t[bad], res[bad])]
    dual = float(cert.p @ problem.prior_mass)
    ok = (min_r >= -D1_TOL) and not viol
    return VerifyReport(
        ok=ok,
        min_residual=min_r,
        max_support_residual=float(np.max(np.abs(res))) if res.size else 0.0,
        violations=viol,
        primal_value=value_under(outcome, model),
        dual_value=dual,
    )


def fixed_certificate(problem: DiscreteProblem, p, q, eps_gamma: Optional[float] = None, rule: str = "given") -> DualCertificate:
    """Wrap externally supplied prices and multipliers as a certificate on the problem grid."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != problem.theta_grid.shape or q.shape != problem.a_grid.shape:
        raise ValueError("price and multiplier vectors must match the state and action grids")
    sup = problem.support
    lo, hi, _ = _q_bounds(problem.model, problem.theta_grid[sup], p[sup], problem.a_grid)
    return DualCertificate(
        theta_grid=problem.theta_grid,
        p=p,
        support=sup,
        a_grid=problem.a_grid,
        q=q,
        Q_lo=lo,
        Q_hi=hi,
        rule=[rule] * problem.a_grid.size,
        eps_gamma=gamma_tolerance(problem.V) if eps_gamma is None else eps_gamma,
        theta_star=theta_star_many(problem.model, problem.a_grid),
    )
