"""Negative assortative disclosure: shooting for the pooling boundaries.

The boundaries t1(a) < theta*(a) < t2(a) solve two coupled equations: the
obedience mass balance u(a,t1) f(t1) t1' = u(a,t2) f(t2) t2' and the total
derivative of the pair multiplier q(a, t1, t2).  At the closing point the
two curves meet like a square root in a, so integrating in a is singular
there.  We integrate with s = t2 as the independent variable instead, which
keeps both a(s) and t1(s) smooth through the closing point.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import optimize
from scipy.interpolate import CubicHermiteSpline

from .contact import q_pair
from .exceptions import (
    BracketFailure,
    BudgetExhausted,
    PreconditionFailure,
    PriorHasAtoms,
    SingularSystem,
)
from .lp import Outcome
from .model import PreferenceModel, Prior, best_response_many, bisect, theta_star_many

DELTA_STOP = 1e-4
DET_TOL = 1e-12
MESH = 2000
VERIFY_TOL = 1e-3
FD_REL = 1e-6


def _spans(model: PreferenceModel):
    return model.a_bounds[1] - model.a_bounds[0], model.theta_bounds[1] - model.theta_bounds[0]


_DA = np.array([0.0, 1, -1, 0, 0, 0, 0])
_D1 = np.array([0.0, 0, 0, 1, -1, 0, 0])
_D2 = np.array([0.0, 0, 0, 0, 0, 1, -1])


def _q_partials(model, a, t1, t2):
    """q, q'_closed and the partial derivatives of q by central differences."""
    sa, st = _spans(model)
    ha, ht = FD_REL * sa, FD_REL * st
    A = a + ha * _DA
    Q, QP = q_pair(model, A, t1 + ht * _D1, t2 + ht * _D2)
    return Q[0], QP[0], (Q[1] - Q[2]) / (2 * ha), (Q[3] - Q[4]) / (2 * ht), (Q[5] - Q[6]) / (2 * ht)


def _system(model, prior, a, t1, t2):
    u1, u2 = float(model.u(a, t1)), float(model.u(a, t2))
    f1, f2 = float(prior.pdf(np.asarray(t1))), float(prior.pdf(np.asarray(t2)))
    q, qp, qa, q1, q2 = _q_partials(model, a, t1, t2)
    M = np.array([[u1 * f1, -u2 * f2], [q1, q2]])
    rhs = np.array([0.0, qp - qa])
    det = u1 * f1 * q2 + u2 * f2 * q1
    return M, rhs, det


def nad_rhs(model: PreferenceModel, prior: Prior, a: float, t1: float, t2: float) -> tuple[float, float]:
    """Derivatives (t1', t2') of the pooling boundaries at action a."""
    M, rhs, det = _system(model, prior, a, t1, t2)
    if not np.isfinite(det) or abs(det) < DET_TOL:
        raise SingularSystem("boundary system is singular", a=float(a), t1=float(t1), t2=float(t2), det=float(det))
    x = np.linalg.solve(M, rhs)
    return float(x[0]), float(x[1])


def _slopes(model, prior, a, t1, s):
    """(da/ds, dt1/ds) with s = t2."""
    M, rhs, det = _system(model, prior, a, t1, s)
    if not np.isfinite(det) or abs(det) < DET_TOL:
        raise SingularSystem("boundary system is singular", a=float(a), t1=float(t1), t2=float(s), det=float(det))
    r = -M[0, 1] / M[0, 0]  # u2 f2 / (u1 f1)
    denom = rhs[1]
    if denom == 0.0:
        raise SingularSystem("upper boundary is stationary", a=float(a))
    return (M[1, 0] * r + M[1, 1]) / denom, r


@dataclass
class _Path:
    s: np.ndarray
    a: np.ndarray
    t1: np.ndarray
    da: np.ndarray
    dt1: np.ndarray
    reason: str
    residual: float


class _Crossed(Exception):
    def __init__(self, low: bool):
        self.low = low


def _integrate(model, prior, a0, steps):
    """RK4 in s from (a0, theta_min) at s = theta_max down to the closing point.

    A step whose stages leave the region t1 < theta*(a) < t2 is halved until
    the crossing is pinned down to a tiny step; which boundary crossed gives
    the sign of the shooting residual.
    """
    lo, hi = prior.support
    h = (hi - lo) / steps
    alo, ahi = model.a_bounds
    s, a, t1 = hi, float(a0), lo

    def f(s, y):
        # single crossing: t1 < theta*(a) < t2 iff u(a, t1) < 0 < u(a, t2)
        if model.u(y[0], y[1]) >= 0:
            raise _Crossed(True)
        if model.u(y[0], s) <= 0:
            raise _Crossed(False)
        return np.array(_slopes(model, prior, y[0], y[1], s))

    S, A, T1, DA, DT = [s], [a], [t1], [], []
    y = np.array([a, t1])
    k1 = f(s, y)
    DA.append(k1[0])
    DT.append(k1[1])
    reason, sign = "closed", 0.0
    shrink = 1.0
    while True:
        gap = s - y[1]
        step = h * shrink
        rate = max(1 - k1[1], 1e-12)
        final = False
        if gap - rate * step <= DELTA_STOP:
            # approach the stopping gap geometrically, then land on it
            step = max((gap - DELTA_STOP) / rate, 0.0)
            final = gap - DELTA_STOP <= DELTA_STOP
            if not final:
                step /= 2
        try:
            k2 = f(s - step / 2, y - step / 2 * k1)
            k3 = f(s - step / 2, y - step / 2 * k2)
            yn = y - step / 6 * (k1 + 2 * k2 + 2 * k3 + f(s - step, y - step * k3))
            sn = s - step
            if not np.all(np.isfinite(yn)) or yn[0] < alo or yn[0] > ahi:
                reason = "left_action_range"
                break
            kn = f(sn, yn)
        except _Crossed as exc:
            if step > 1e-9 * h and not final:
                shrink = min(shrink, step / h) / 2
                continue
            reason, sign = "crossed", 1.0 if exc.low else -1.0
            break
        except SingularSystem:
            reason = "singular"
            break
        s, y, k1 = sn, yn, kn
        shrink = min(1.0, shrink * 2)
        S.append(s), A.append(y[0]), T1.append(y[1]), DA.append(k1[0]), DT.append(k1[1])
        if final or len(S) > 50 * steps:
            reason = "closed" if final else "stalled"
            break
    if reason == "crossed":
        # the gap left open when a boundary reached theta* sets the size
        residual = sign * max(s - y[1], DELTA_STOP)
    else:
        ts = float(theta_star_many(model, y[0])[0])
        residual = s + y[1] - 2 * (ts if np.isfinite(ts) else 0.5 * (s + y[1]))
    return _Path(np.array(S), np.array(A), np.array(T1), np.array(DA), np.array(DT), reason, residual)


@dataclass
class NadSolution:
    a_lo: float
    a_hi: float
    a: np.ndarray
    t1: np.ndarray
    t2: np.ndarray
    q: np.ndarray
    h: float
    orientation: str
    residual: float
    method: str
    path_s: Optional[np.ndarray] = None
    path_a: Optional[np.ndarray] = None
    path_t1: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    def csv_rows(self):
        return [(a, t1, t2, q) for a, t1, t2, q in zip(self.a, self.t1, self.t2, self.q)]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write("a,t1,t2,q\n")
            for row in self.csv_rows():
                fh.write(",".join(repr(float(x)) for x in row) + "\n")

    def summary(self) -> dict:
        return {
            "a_lo": self.a_lo,
            "a_hi": self.a_hi,
            "orientation": self.orientation,
            "method": self.method,
            "mesh_step": self.h,
            "mesh_points": int(self.a.size),
            "shooting_residual": self.residual,
            **self.meta,
        }

    def t1_at(self, a):
        return np.interp(a, self.a, self.t1)

    def t2_at(self, a):
        return np.interp(a, self.a, self.t2)


def _require_density(prior: Prior):
    if prior.has_atoms or prior.pdf is None:
        raise PriorHasAtoms("boundary shooting needs a prior density; use the linear program for atom priors")


def _check_preconditions(model, prior, orientation):
    from .structure import pooling_test, sdpd_verdict

    A = np.linspace(*model.a_bounds, 9)
    T = np.linspace(*prior.support, 9)
    v = sdpd_verdict(model, A, T)
    if v.verdict != f"strict_{orientation}":
        raise PreconditionFailure(
            f"perturbation conditions do not give strict {orientation} structure",
            precondition="sdpd", verdict=v.verdict, orientation=orientation,
        )
    pool = pooling_test(model, np.linspace(*prior.support, 21))
    if not pool.holds:
        raise PreconditionFailure("pooling is not profitable for every pair of states", precondition="pooling",
                                  witness=pool.to_dict()["witness"])


def nad_shoot(
    model: PreferenceModel,
    prior: Prior,
    orientation: str = "dipped",
    mesh: int = MESH,
    steps: int = 500,
    check_preconditions: bool = False,
) -> NadSolution:
    """Shoot from the fully pooled end and match the disclosed state at the closing point."""
    _require_density(prior)
    if orientation not in ("dipped", "peaked"):
        raise ValueError("orientation must be 'dipped' or 'peaked'")
    if model.family == "quantile":
        return _quantile_closed_form(model, prior, mesh)
    if check_preconditions:
        _check_preconditions(model, prior, orientation)
    lo, hi = prior.support
    grid = np.linspace(lo, hi, 4001)
    m = prior.masses_on(grid)
    a_prior = float(best_response_many(model, grid[None, :], m[None, :], strict=False)[0])
    end = hi if orientation == "dipped" else lo
    a_end = float(best_response_many(model, np.array([[end]]), np.ones((1, 1)), strict=False)[0])
    x0, x1 = sorted((a_prior, a_end))
    pad = 1e-9 * (1 + abs(x1 - x0))
    x0, x1 = x0 + pad, x1 - pad

    def resid(a0):
        return _integrate(model, prior, a0, steps).residual

    r0, r1 = resid(x0), resid(x1)
    if np.sign(r0) == np.sign(r1):
        scan = np.linspace(x0, x1, 64)
        vals = np.array([resid(x) for x in scan])
        flips = np.nonzero(np.sign(vals[:-1]) != np.sign(vals[1:]))[0]
        if flips.size == 0:
            raise BracketFailure("shooting residual keeps one sign on the bracket",
                                 bracket=[x0, x1], residuals=[r0, r1])
        k = int(flips[0])
        x0, x1 = scan[k], scan[k + 1]
    root = optimize.brentq(resid, x0, x1, xtol=1e-13, rtol=4 * np.finfo(float).eps, maxiter=200)
    path = _integrate(model, prior, root, steps)
    if path.reason != "closed":
        raise BracketFailure("shooting did not close at the matched start", reason=path.reason, start=root)
    return _assemble(model, path, root, orientation, mesh, (hi - lo) / steps)


def _assemble(model, path: _Path, start, orientation, mesh, hs) -> NadSolution:
    s, a, t1, da, dt = path.s, path.a, path.t1, path.da, path.dt1
    gap = s[-1] - t1[-1]
    ds_close = gap / (1 - dt[-1])
    s_close = s[-1] - ds_close
    a_close = a[-1] - da[-1] * ds_close
    a_lo, a_hi = (a_close, start) if orientation == "dipped" else (start, a_close)
    A = np.linspace(a_lo, a_hi, mesh + 1)
    A[0], A[-1] = a_lo, a_hi
    order = np.argsort(s)
    sa, aa, ta, daa, dta = s[order], a[order], t1[order], da[order], dt[order]
    a_of_s = CubicHermiteSpline(sa, aa, daa)
    t1_of_s = CubicHermiteSpline(sa, ta, dta)
    T1 = np.empty_like(A)
    T2 = np.empty_like(A)
    a_first = a[-1]
    near = (A - a_first) * (a_close - a_first) > 0 if a_close != a_first else np.zeros(A.size, bool)
    near |= A == a_close
    # square-root law between the last integrated point and the closing point
    w = np.sqrt(np.clip(np.abs(A[near] - a_close) / max(abs(a_first - a_close), 1e-300), 0.0, 1.0))
    T1[near] = s_close - (s_close - t1[-1]) * w
    T2[near] = s_close + (s[-1] - s_close) * w
    body = ~near
    if body.any():
        target = A[body]
        lo_s = np.full(target.size, sa[0])
        hi_s = np.full(target.size, sa[-1])
        sign = 1.0 if aa[-1] >= aa[0] else -1.0
        root = bisect(lambda x: sign * (a_of_s(x) - target), lo_s, hi_s, width=1e-15)
        T2[body] = root
        T1[body] = t1_of_s(root)
    q, _ = q_pair(model, A, T1, T2)
    bad = ~np.isfinite(q) | (np.abs(T2 - T1) < 1e-6)
    good = np.nonzero(~bad)[0]
    if bad.any() and good.size >= 2:
        for i in np.nonzero(bad)[0]:
            k = good[np.argsort(np.abs(good - i))[:2]]
            q[i] = q[k[0]] + (q[k[1]] - q[k[0]]) * (A[i] - A[k[0]]) / (A[k[1]] - A[k[0]])
    return NadSolution(
        a_lo=float(a_lo), a_hi=float(a_hi), a=A, t1=T1, t2=T2, q=q, h=float(A[1] - A[0]),
        orientation=orientation, residual=float(path.residual), method="shooting",
        path_s=s, path_a=a, path_t1=t1,
        meta={"closing_state": float(s_close), "integration_step": float(hs), "integration_points": int(s.size)},
    )


def _ppf(prior: Prior, p):
    lo, hi = prior.support
    p = np.asarray(p, dtype=float)
    return bisect(lambda t: prior.cdf(t) - p, np.full(p.shape, lo), np.full(p.shape, hi), width=1e-14)


def _quantile_closed_form(model, prior, mesh) -> NadSolution:
    """Upper boundary is the action itself; the lower balances kappa against 1 - kappa."""
    k = model.kappa
    lo, hi = prior.support
    a_lo = float(_ppf(prior, np.array([1 - k]))[0])
    A = np.linspace(a_lo, hi, mesh + 1)
    T1 = _ppf(prior, (1 - k) * (1 - prior.cdf(A)) / k)
    T1[0] = a_lo
    return NadSolution(
        a_lo=a_lo, a_hi=float(hi), a=A, t1=T1, t2=A.copy(), q=np.full(A.size, np.nan), h=float(A[1] - A[0]),
        orientation="dipped", residual=0.0, method="closed_form",
    )


# --------------------------------------------------------------------------
# verification


@dataclass
class NadReport:
    ok: bool
    obedience: float
    foc: Optional[float]
    boundary: dict
    tolerance: float = VERIFY_TOL

    def to_dict(self):
        return {"ok": self.ok, "max_obedience_residual": self.obedience, "max_foc_residual": self.foc,
                "boundary_residuals": self.boundary, "tolerance": self.tolerance}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def obedience_residuals(sol: NadSolution, model: PreferenceModel, prior: Prior) -> np.ndarray:
    """Relative mass-balance error of each mesh cell."""
    A, T1, T2 = sol.a, sol.t1, sol.t2
    m1 = np.abs(np.diff(prior.cdf(T1)))
    m2 = np.abs(np.diff(prior.cdf(T2)))
    am = 0.5 * (A[1:] + A[:-1])
    u1 = model.u(am, 0.5 * (T1[1:] + T1[:-1]))
    u2 = model.u(am, 0.5 * (T2[1:] + T2[:-1]))
    den = np.abs(u1) * m1 + np.abs(u2) * m2
    return np.where(den > 0, np.abs(u1 * m1 + u2 * m2) / np.where(den > 0, den, 1.0), 0.0)


def nad_verify(sol: NadSolution, model: PreferenceModel, prior: Prior, tol: float = VERIFY_TOL) -> NadReport:
    ob = float(np.max(obedience_residuals(sol, model, prior)))
    foc = None
    if np.all(np.isfinite(sol.q)):
        qp = np.gradient(sol.q, sol.a)
        inner = slice(2, -2)
        vals = []
        for t in (sol.t1, sol.t2):
            r = model.v(sol.a, t) + sol.q * model.u_a(sol.a, t) + qp * model.u(sol.a, t)
            vals.append(np.abs(r[inner]) / (1 + np.abs(model.v(sol.a, t)[inner])))
        foc = float(max(np.max(v) for v in vals))
    lo, hi = prior.support
    pooled, closed = (-1, 0) if sol.orientation == "dipped" else (0, -1)
    ts = float(theta_star_many(model, sol.a[closed])[0])
    boundary = {
        "t1_pooled_end": float(abs(sol.t1[pooled] - lo)),
        "t2_pooled_end": float(abs(sol.t2[pooled] - hi)),
        "t1_closing": float(abs(sol.t1[closed] - ts)),
        "t2_closing": float(abs(sol.t2[closed] - ts)),
    }
    worst = max([ob, *boundary.values()] + ([foc] if foc is not None else []))
    return NadReport(ok=bool(worst <= tol), obedience=ob, foc=foc, boundary=boundary, tolerance=tol)


# --------------------------------------------------------------------------
# sand-lever reconstruction


def sand_lever_assign(
    sol: NadSolution, prior: Prior, model: PreferenceModel, theta_grid=None, slack_cells: int = 10
) -> Outcome:
    """Rebuild the outcome from the boundaries on a discretised prior.

    The top state is sent to the lever a with t2(a) = theta; the mass that
    balances it is taken from the lowest unused states, so each lever is
    exactly obedient.  Whatever is left is disclosed.
    """
    lo, hi = prior.support
    T = np.linspace(lo, hi, 2001) if theta_grid is None else np.asarray(theta_grid, dtype=float)
    budget = prior.masses_on(T).astype(float)
    cell = float(np.max(np.diff(T))) if T.size > 1 else 0.0
    order = np.argsort(sol.t2)
    t2s, as_ = sol.t2[order], sol.a[order]
    t2_min = float(t2s[0])
    rows_a, rows_t, rows_m = [], [], []
    j = 0
    k = T.size - 1
    while k > j and T[k] > t2_min:
        a = float(np.interp(T[k], t2s, as_))
        u_top = float(model.u(a, T[k]))
        need = u_top * budget[k]
        if u_top <= 0 or need <= 0:
            k -= 1
            continue
        t1_expect = float(sol.t1_at(a))
        drawn = 0.0
        while need > 1e-18 and j < k:
            u_low = float(model.u(a, T[j]))
            if u_low >= 0:
                break
            if abs(T[j] - t1_expect) > slack_cells * cell + 1e-9:
                raise BudgetExhausted(
                    "balancing state drifted away from the lower boundary",
                    lever=a, state=float(T[j]), expected=t1_expect,
                )
            x = min(budget[j], need / -u_low)
            rows_a.append(a), rows_t.append(T[j]), rows_m.append(x)
            budget[j] -= x
            need -= x * -u_low
            drawn += x * -u_low
            if budget[j] <= 1e-18:
                budget[j] = 0.0
                j += 1
        used = drawn / u_top
        rows_a.append(a), rows_t.append(T[k]), rows_m.append(used)
        budget[k] -= used
        if need > 1e-18:
            break
        k -= 1
    left = budget > 1e-18
    if left.any():
        own = best_response_many(model, T[left][:, None], np.ones((int(left.sum()), 1)), strict=False)
        rows_a.extend(own), rows_t.extend(T[left]), rows_m.extend(budget[left])
    if np.any(np.asarray(rows_m) < -1e-9):
        raise BudgetExhausted("negative mass in assignment")
    return Outcome.from_entries(np.asarray(rows_a), np.asarray(rows_t), np.clip(rows_m, 0.0, None), eps=0.0)


def upper_action_mass(outcome: Outcome, a: float) -> float:
    """Probability that the recommended action is at least a."""
    return float(outcome.mass[outcome.a >= a - 1e-12].sum())
