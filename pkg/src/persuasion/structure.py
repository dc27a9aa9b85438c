"""Structural diagnostics: twist, dippedness, disclosure and pooling tests.

Every verdict here is computed on finite samples of actions, states and
weights, so a positive result is a grid certificate, not a proof.
"""

from __future__ import annotations

import itertools
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .exceptions import Infeasible, MomentNonzero, NotApplicable, ScanTooLarge
from .lp import Outcome, value_under
from .model import PreferenceModel, Posterior, best_response_many, theta_star_many
from .simplex import simplex_max

SCAN_CAP = 10**8
IMPROVE_TOL = 1e-9
# relative R entries this small are treated as rounding noise
R_SNAP = 1e-10
MEAN_RECEIVER = ("simple", "simple_receiver", "translation_invariant")


def margin(scale) -> float:
    return 1e-10 * (1.0 + float(np.max(np.abs(scale))))


# --------------------------------------------------------------------------
# twist and the perturbation matrix


def twist_many(model: PreferenceModel, a, t1, t2, t3) -> np.ndarray:
    """Determinant of the rows (v, u, u_a) evaluated at three states."""
    a = np.asarray(a, dtype=float)
    cols = []
    for t in (t1, t2, t3):
        cols.append(np.stack(np.broadcast_arrays(model.v(a, t), model.u(a, t), model.u_a(a, t)), axis=-1))
    M = np.stack(cols, axis=-1)
    return np.linalg.det(M)


def twist_determinant(model: PreferenceModel, a: float, t1: float, t2: float, t3: float) -> float:
    return float(twist_many(model, a, t1, t2, t3))


@dataclass
class TwistReport:
    ok: bool
    sign: int
    min_abs: float
    witness: Optional[tuple] = None

    def to_dict(self):
        d = asdict(self)
        d["witness"] = None if self.witness is None else list(map(float, self.witness))
        return d


def twist_check(model: PreferenceModel, a_grid, theta_grid, rel_tol: float = 1e-9) -> TwistReport:
    """Is |S| bounded away from zero with one sign where t1 < theta*(a) < t3?"""
    A = np.asarray(a_grid, dtype=float)
    T = np.asarray(theta_grid, dtype=float)
    ts = theta_star_many(model, A)
    trip = np.array(list(itertools.combinations(range(T.size), 3)))
    if trip.size == 0:
        return TwistReport(True, 0, np.inf)
    worst, sign, wit = np.inf, 0, None
    signs = set()
    for i, a in enumerate(A):
        if not np.isfinite(ts[i]):
            continue
        t1, t2, t3 = T[trip[:, 0]], T[trip[:, 1]], T[trip[:, 2]]
        keep = (t1 < ts[i]) & (ts[i] < t3)
        if not keep.any():
            continue
        S = twist_many(model, a, t1[keep], t2[keep], t3[keep])
        scale = rel_tol * (1 + np.max(np.abs(model.v(a, T)))) * np.ptp(T) ** 3
        k = int(np.argmin(np.abs(S)))
        if abs(S[k]) < worst:
            worst = float(abs(S[k]))
            wit = (a, t1[keep][k], t2[keep][k], t3[keep][k])
        signs.update(np.sign(S[np.abs(S) > scale]).astype(int).tolist())
        if worst <= scale:
            return TwistReport(False, 0, worst, wit)
    if len(signs) > 1:
        return TwistReport(False, 0, worst, wit)
    sign = signs.pop() if signs else 0
    return TwistReport(sign != 0, sign, worst, wit if sign == 0 else None)


def r_matrix(model: PreferenceModel, a1, a2, t1, t2, t3) -> np.ndarray:
    """Effect of the three-point reallocation on (sender value, obedience at a1, obedience at a2)."""
    return _r_many(model, np.atleast_1d(a1), np.atleast_1d(a2), np.atleast_1d(t1), np.atleast_1d(t2), np.atleast_1d(t3))[0]


def _r_many(model, a1, a2, t1, t2, t3):
    d = lambda t: model.V(a2, t) - model.V(a1, t)  # noqa: E731
    R = np.empty(np.broadcast(a1, a2, t1, t2, t3).shape + (3, 3))
    R[..., 0, 0] = d(t1)
    R[..., 0, 1] = -d(t2)
    R[..., 0, 2] = d(t3)
    R[..., 1, 0] = -model.u(a1, t1)
    R[..., 1, 1] = model.u(a1, t2)
    R[..., 1, 2] = -model.u(a1, t3)
    R[..., 2, 0] = model.u(a2, t1)
    R[..., 2, 1] = -model.u(a2, t2)
    R[..., 2, 2] = model.u(a2, t3)
    return R


def improving_direction(R) -> Optional[np.ndarray]:
    """Small LP: a y >= 0 with Ry >= 0 and 1'Ry >= 1e-9, or None.

    R is rescaled to unit max-norm and y normalised to sum(y) <= 1, so the
    threshold is scale free.  Feasibility is that of the simplex (about
    1e-9), so on cones that are degenerate at that level the verdict can
    differ from the exact ray enumeration in :func:`improvable_many`.
    """
    R = np.asarray(R, dtype=float)
    s = float(np.max(np.abs(R)))
    if s == 0.0:
        return None
    Rn = R / s
    Rn[np.abs(Rn) <= R_SNAP] = 0.0
    # variables: y (3), slack for Ry >= 0 (3), slack for sum y <= 1 (1)
    A = np.zeros((4, 7))
    A[:3, :3] = Rn
    A[:3, 3:6] = -np.eye(3)
    A[3, :3] = 1.0
    A[3, 6] = 1.0
    b = np.array([0.0, 0.0, 0.0, 1.0])
    c = np.concatenate([Rn.sum(axis=0), np.zeros(4)])
    try:
        res = simplex_max(c, A, b)
    except Infeasible:
        # y = 0 is always feasible, so this is rounding on near-zero entries
        coarse = np.where(np.abs(Rn) < 1e-6, 0.0, Rn)
        A[:3, :3] = coarse
        c[:3] = coarse.sum(axis=0)
        res = simplex_max(c, A, b)
    if res.objective < IMPROVE_TOL:
        return None
    return res.x[:3]


_PAIRS = list(itertools.combinations(range(6), 2))


def improvable_many(R: np.ndarray) -> np.ndarray:
    """Vectorised existence test equivalent to :func:`improving_direction`.

    The cone {y >= 0, Ry >= 0} is pointed, so it has an improving point iff
    one of its extreme rays does; every extreme ray is the cross product of
    two of the six constraint normals.
    """
    R = np.asarray(R, dtype=float).reshape(-1, 3, 3)
    s = np.max(np.abs(R), axis=(1, 2))
    s = np.where(s == 0, 1.0, s)
    Rn = R / s[:, None, None]
    Rn[np.abs(Rn) <= R_SNAP] = 0.0
    N = np.concatenate([np.broadcast_to(np.eye(3), Rn.shape), Rn], axis=1)
    found = np.zeros(R.shape[0], dtype=bool)
    for i, j in _PAIRS:
        y = np.cross(N[:, i], N[:, j])
        norm = np.abs(y).sum(axis=1)
        valid = norm > 1e-12
        y = y / np.where(valid, norm, 1.0)[:, None]
        for sgn in (1.0, -1.0):
            yy = sgn * y
            Ry = np.einsum("kij,kj->ki", Rn, yy)
            feas = valid & np.all(yy >= -1e-12, axis=1) & np.all(Ry >= -1e-12, axis=1)
            found |= feas & (Ry.sum(axis=1) >= IMPROVE_TOL)
    return found


@dataclass
class RScan:
    orientation: str
    certified: bool
    checked: int
    witness: Optional[tuple] = None

    def to_dict(self):
        d = asdict(self)
        d["witness"] = None if self.witness is None else list(map(float, self.witness))
        return d


def r_scan(model: PreferenceModel, a_grid, theta_grid, orientation: str = "dipped") -> RScan:
    """Check the three-point perturbation condition on every sampled configuration."""
    A = np.asarray(a_grid, dtype=float)
    T = np.asarray(theta_grid, dtype=float)
    ts = theta_star_many(model, A)
    trip = np.array(list(itertools.combinations(range(T.size), 3)))
    if trip.size == 0:
        return RScan(orientation, True, 0)
    t1, t2, t3 = T[trip[:, 0]], T[trip[:, 1]], T[trip[:, 2]]
    checked = 0
    for i, j in itertools.product(range(A.size), repeat=2):
        if (orientation == "dipped" and not A[j] > A[i]) or (orientation == "peaked" and not A[j] < A[i]):
            continue
        if not np.isfinite(ts[i]):
            continue
        keep = (t1 <= ts[i]) & (ts[i] <= t3)
        if not keep.any():
            continue
        R = _r_many(model, A[i], A[j], t1[keep], t2[keep], t3[keep])
        ok = improvable_many(R)
        checked += int(keep.sum())
        if not ok.all():
            k = int(np.argmin(ok))
            return RScan(orientation, False, checked, (A[i], A[j], t1[keep][k], t2[keep][k], t3[keep][k]))
    return RScan(orientation, True, checked)


# --------------------------------------------------------------------------
# dippedness of finite point sets


@dataclass
class Dippedness:
    verdict: str
    strictly_dipped: bool
    strictly_peaked: bool
    peaked_triple: Optional[tuple] = None
    dipped_triple: Optional[tuple] = None

    def to_dict(self):
        def tr(t):
            return None if t is None else [list(map(float, p)) for p in t]

        return {
            "verdict": self.verdict,
            "strictly_single_dipped": self.strictly_dipped,
            "strictly_single_peaked": self.strictly_peaked,
            "strictly_single_peaked_triple": tr(self.peaked_triple),
            "strictly_single_dipped_triple": tr(self.dipped_triple),
        }


def _as_points(obj) -> np.ndarray:
    if isinstance(obj, Outcome):
        return np.column_stack([obj.a, obj.theta])
    if hasattr(obj, "in_gamma"):
        return np.array(obj.points(star=True), dtype=float).reshape(-1, 2)
    return np.asarray(obj, dtype=float).reshape(-1, 2)


def _find_triple(pts: np.ndarray, peaked: bool):
    """First (a1,t1),(a2,t2),(a1,t3) with t1 < t2 < t3 and a2 > a1 (peaked) or a2 < a1."""
    acts = np.unique(pts[:, 0])
    order = np.argsort(pts[:, 0], kind="stable")
    P = pts[order]
    for a1 in acts:
        sec = P[P[:, 0] == a1, 1]
        if sec.size < 2:
            continue
        lo, hi = sec.min(), sec.max()
        other = P[P[:, 0] > a1] if peaked else P[P[:, 0] < a1][::-1]
        hit = (other[:, 1] > lo) & (other[:, 1] < hi)
        if hit.any():
            a2, t2 = other[int(np.argmax(hit))]
            return ((a1, lo), (a2, t2), (a1, hi))
    return None


def classify_dippedness(points) -> Dippedness:
    """Verdict for a finite set of (action, state) points, an outcome or a contact set.

    ``single_dipped`` means no strictly single-peaked triple exists while a
    strictly single-dipped one does; ``both`` means neither kind exists.
    """
    pts = _as_points(points)
    acts, counts = np.unique(pts[:, 0], return_counts=True)
    multi = int(np.sum(counts >= 2))
    if multi * max(len(pts), 1) > SCAN_CAP:
        raise ScanTooLarge("triple scan exceeds the candidate cap", candidates=multi * len(pts))
    pk = _find_triple(pts, peaked=True)
    dp = _find_triple(pts, peaked=False)
    three = bool(np.any(counts >= 3))
    if pk is None and dp is None:
        verdict = "both"
    elif pk is None:
        verdict = "single_dipped"
    elif dp is None:
        verdict = "single_peaked"
    else:
        verdict = "neither"
    return Dippedness(verdict, pk is None and not three, dp is None and not three, pk, dp)


def pairs_nested(outcome: Outcome, model: Optional[PreferenceModel] = None) -> tuple[bool, Optional[tuple]]:
    """Are the state ranges of all pooling sections totally ordered by inclusion?

    With a model, states where u(a, t) = 0 are set aside first.
    """
    spans = []
    for a, (t, m) in outcome.sections().items():
        if model is not None:
            t = t[np.abs(model.u(a, t)) > 1e-12]
        if t.size >= 2:
            spans.append((a, t.min(), t.max()))
    for (a, l1, h1), (b, l2, h2) in itertools.combinations(spans, 2):
        inside = (l1 <= l2 and h2 <= h1) or (l2 <= l1 and h1 <= h2)
        if not inside:
            return False, (a, l1, h1, b, l2, h2)
    return True, None


# --------------------------------------------------------------------------
# monotone-ratio conditions


@dataclass
class SdpdConditions:
    dipped: str
    peaked: str
    dipped_witness: Optional[tuple] = None
    peaked_witness: Optional[tuple] = None

    def to_dict(self):
        d = asdict(self)
        for k in ("dipped_witness", "peaked_witness"):
            d[k] = None if d[k] is None else list(map(float, d[k]))
        return d


def _monotone(F: np.ndarray, increasing: bool):
    """F has states on the last axis.  Returns (weak, strict, index of first failure)."""
    D = np.diff(F, axis=-1)
    if not increasing:
        D = -D
    tol = margin(F)
    weak_bad = D < -tol
    strict_all = bool(np.all(D > tol))
    if weak_bad.any():
        return False, False, np.unravel_index(int(np.argmax(weak_bad)), D.shape)
    return True, strict_all, None


def check_sdpd_conditions(model: PreferenceModel, a_grid, theta_grid) -> SdpdConditions:
    """Monotonicity of u_at/u_t and v_t(a2, .)/u_t(a1, .) in the state."""
    A = np.asarray(a_grid, dtype=float)
    T = np.asarray(theta_grid, dtype=float)
    ut = model.partial("u_theta")(A[:, None], T[None, :])
    uat = model.partial("u_atheta")(A[:, None], T[None, :])
    vt = model.partial("v_theta")(A[:, None], T[None, :])
    if np.any(ut <= 0):
        i, j = np.argwhere(ut <= 0)[0]
        w = (A[i], T[j])
        return SdpdConditions("fails", "fails", w, w)
    g = uat / ut
    h = vt[None, :, :] / ut[:, None, :]  # h[i1, i2, t] = v_t(a2, t) / u_t(a1, t)
    i1, i2 = np.meshgrid(np.arange(A.size), np.arange(A.size), indexing="ij")
    out = {}
    for name, inc, mask in (("dipped", True, i2 >= i1), ("peaked", False, i2 <= i1)):
        gw, gs, gbad = _monotone(g, inc)
        H = h[mask]
        hw, hs, hbad = _monotone(H, inc)
        if gw and hw:
            out[name] = ("strict" if (gs or hs) else "weak", None)
        elif not gw:
            out[name] = ("fails", (A[gbad[0]], T[gbad[1]]))
        else:
            k = np.argwhere(mask)[hbad[0]]
            out[name] = ("fails", (A[k[0]], A[k[1]], T[hbad[1]]))
    return SdpdConditions(out["dipped"][0], out["peaked"][0], out["dipped"][1], out["peaked"][1])


@dataclass
class SdpdVerdict:
    verdict: str
    conditions: SdpdConditions
    twist: TwistReport
    dipped_scan: RScan
    peaked_scan: RScan

    def to_dict(self):
        return {
            "verdict": self.verdict,
            "conditions": self.conditions.to_dict(),
            "twist": self.twist.to_dict(),
            "dipped_scan": self.dipped_scan.to_dict(),
            "peaked_scan": self.peaked_scan.to_dict(),
            "grid_certified": True,
        }


def sdpd_verdict(model: PreferenceModel, a_grid, theta_grid, scan_a=None, scan_theta=None) -> SdpdVerdict:
    """Combine the ratio conditions with the perturbation scan.

    Strict dipped (peaked) holds if the ratio conditions hold strictly, or
    if the perturbation scan certifies the orientation and the twist
    determinant keeps one sign.
    """
    cond = check_sdpd_conditions(model, a_grid, theta_grid)
    sa = np.asarray(a_grid if scan_a is None else scan_a, dtype=float)
    st = np.asarray(theta_grid if scan_theta is None else scan_theta, dtype=float)
    tw = twist_check(model, sa, st)
    dscan = r_scan(model, sa, st, "dipped")
    pscan = r_scan(model, sa, st, "peaked")
    strict_d = cond.dipped == "strict" or (dscan.certified and tw.ok)
    strict_p = cond.peaked == "strict" or (pscan.certified and tw.ok)
    weak_d = cond.dipped != "fails" or dscan.certified
    weak_p = cond.peaked != "fails" or pscan.certified
    if strict_d and not strict_p:
        v = "strict_dipped"
    elif strict_p and not strict_d:
        v = "strict_peaked"
    elif weak_d and weak_p:
        v = "both"
    elif weak_d:
        v = "dipped"
    elif weak_p:
        v = "peaked"
    else:
        v = "none"
    return SdpdVerdict(v, cond, tw, dscan, pscan)


# --------------------------------------------------------------------------
# pairwise decomposition


def pairwise_split(model: PreferenceModel, posterior: Posterior) -> list[tuple[float, Posterior]]:
    """Split a posterior into binary or degenerate posteriors with the same best response.

    Returns (weight, posterior) pairs whose weighted mixture is the input.
    """
    a = float(best_response_many(model, posterior.theta[None, :], posterior.weights[None, :])[0])
    t = posterior.theta
    w = posterior.weights.copy()
    u = model.u(a, t)
    scale = float(np.max(np.abs(u))) if u.size else 1.0
    if abs(float(w @ u)) > 1e-9 * (1 + scale):
        raise MomentNonzero("posterior does not satisfy obedience at its best response", moment=float(w @ u))
    band = 1e-12 * (1 + scale)
    parts: list[tuple[float, Posterior]] = []
    for k in np.nonzero(np.abs(u) <= band)[0]:
        if w[k] > 0:
            parts.append((float(w[k]), Posterior(np.array([t[k]]), np.array([1.0]))))
    neg = [k for k in np.nonzero(u < -band)[0] if w[k] > 0]
    pos = [k for k in np.nonzero(u > band)[0] if w[k] > 0]
    home: dict[int, int] = {}
    while neg and pos:
        i, j = neg[0], pos[0]
        if len(neg) == 1 and len(pos) == 1:
            mi, mj = w[i], w[j]
            neg.pop(0)
            pos.pop(0)
        elif w[i] * -u[i] <= w[j] * u[j]:
            mi, mj = w[i], min(w[i] * -u[i] / u[j], w[j])
            neg.pop(0)
        else:
            mi, mj = min(w[j] * u[j] / -u[i], w[i]), w[j]
            pos.pop(0)
        w[i] -= mi
        w[j] -= mj
        home[i] = home[j] = len(parts)
        parts.append((mi + mj, (i, j, mi, mj)))
    leftover = {k: w[k] for k in range(w.size) if w[k] > 0 and abs(u[k]) > band}
    for k, m in leftover.items():
        if k not in home:
            if m > 1e-12:
                raise MomentNonzero("unbalanced mass left after pairing", state=float(t[k]), mass=float(m))
            continue
        tot, (i, j, mi, mj) = parts[home[k]]
        if k == i:
            mi += m
        else:
            mj += m
        parts[home[k]] = (mi + mj, (i, j, mi, mj))
    out = []
    for tot, comp in parts:
        if isinstance(comp, Posterior):
            out.append((tot, comp))
        else:
            i, j, mi, mj = comp
            out.append((float(tot), Posterior(np.array([t[i], t[j]]), np.array([mi / tot, mj / tot]))))
    return out


# --------------------------------------------------------------------------
# disclosure versus pooling


@dataclass
class PairTest:
    holds: bool
    worst: float
    witness: Optional[tuple] = None

    def to_dict(self):
        d = asdict(self)
        d["witness"] = None if self.witness is None else list(map(float, self.witness))
        return d


def _pair_gains(model: PreferenceModel, support, rho_grid, chunk: int = 200_000):
    """Yield (i, j, rho, pooled - disclosed) over state pairs and weights."""
    T = np.asarray(support, dtype=float)
    rho = np.asarray(rho_grid, dtype=float)
    own = best_response_many(model, T[:, None], np.ones((T.size, 1)), strict=False)
    Vd = model.V(own, T)
    I, J = np.triu_indices(T.size, 1)
    per = max(1, chunk // max(rho.size, 1))
    for s in range(0, I.size, per):
        ii, jj = I[s : s + per], J[s : s + per]
        R = np.repeat(rho[None, :], ii.size, axis=0).ravel()
        ti = np.repeat(T[ii], rho.size)
        tj = np.repeat(T[jj], rho.size)
        a = best_response_many(model, np.column_stack([ti, tj]), np.column_stack([R, 1 - R]), strict=False)
        pooled = R * model.V(a, ti) + (1 - R) * model.V(a, tj)
        disclosed = R * np.repeat(Vd[ii], rho.size) + (1 - R) * np.repeat(Vd[jj], rho.size)
        yield ti, tj, R, pooled - disclosed


def default_rho(n: int = 99) -> np.ndarray:
    return np.arange(1, n + 1) / (n + 1)


def full_disclosure_test(model: PreferenceModel, support, rho_grid=None) -> PairTest:
    """Disclosing any two states beats pooling them, at every sampled weight."""
    rho = default_rho() if rho_grid is None else rho_grid
    worst, wit = -np.inf, None
    scale = 0.0
    for ti, tj, R, g in _pair_gains(model, support, rho):
        scale = max(scale, float(np.max(np.abs(g))) if g.size else 0.0)
        k = int(np.argmax(g))
        if g[k] > worst:
            worst, wit = float(g[k]), (ti[k], tj[k], R[k])
    return PairTest(worst <= margin(scale), worst, wit)


def pooling_test(model: PreferenceModel, support, rho_grid=None) -> PairTest:
    """For every pair of states some sampled weight makes pooling strictly better."""
    rho = default_rho() if rho_grid is None else rho_grid
    T = np.asarray(support, dtype=float)
    best = {}
    for ti, tj, R, g in _pair_gains(model, T, rho):
        G = g.reshape(-1, len(rho))
        key_i = ti.reshape(-1, len(rho))[:, 0]
        key_j = tj.reshape(-1, len(rho))[:, 0]
        for a, b, row in zip(key_i, key_j, G):
            best[(a, b)] = float(row.max())
    if not best:
        return PairTest(True, np.inf)
    (wi, wj), worst = min(best.items(), key=lambda kv: kv[1])
    scale = max(abs(v) for v in best.values())
    return PairTest(worst > margin(scale), worst, (wi, wj))


@dataclass
class LocalTest:
    holds: bool
    worst_slack: float
    witness: Optional[float] = None
    failures: list = field(default_factory=list)

    def to_dict(self):
        return {
            "holds": self.holds,
            "worst_slack": self.worst_slack,
            "witness": self.witness,
            "n_failures": len(self.failures),
        }


def local_ndSDD_test(model: PreferenceModel, a_grid) -> LocalTest:
    """Local pooling-profitability inequality at the indifference state.

    slack = v u_aa / u_a + 2 (v_t u_a - v u_at) / u_t - v_a, required >= 0.
    """
    A = np.asarray(a_grid, dtype=float)
    ts = theta_star_many(model, A)
    ok = np.isfinite(ts)
    A, ts = A[ok], ts[ok]
    v = model.v(A, ts)
    ua = model.u_a(A, ts)
    rhs = v * model.partial("u_aa")(A, ts) / ua + 2 * (
        model.partial("v_theta")(A, ts) * ua - v * model.partial("u_atheta")(A, ts)
    ) / model.partial("u_theta")(A, ts)
    slack = rhs - model.partial("v_a")(A, ts)
    tol = margin(np.concatenate([rhs, v]))
    bad = slack < -tol
    k = int(np.argmin(slack)) if slack.size else 0
    return LocalTest(
        holds=not bad.any(),
        worst_slack=float(slack[k]) if slack.size else np.inf,
        witness=float(A[k]) if slack.size else None,
        failures=[float(x) for x in A[bad]],
    )


# --------------------------------------------------------------------------
# mass shifting toward single-dippedness


def count_peaked_triples(outcome: Outcome) -> int:
    a, t = outcome.a, outcome.theta
    n = 0
    for sec_a in np.unique(a):
        st = np.sort(t[a == sec_a])
        if st.size < 2:
            continue
        later = a > sec_a
        for x in t[later]:
            n += int(np.sum(st < x) * np.sum(st > x))
    return n


def remove_single_peaked_triples(
    model: PreferenceModel, outcome: Outcome, max_iter: int = 10_000, allow_value_decrease: bool = False
) -> tuple[Outcome, list[dict]]:
    """Shift mass off strictly single-peaked triples in the mean-matching case.

    Each step moves (t3 - t2) e from (a1, t1) and (t2 - t1) e from (a1, t3)
    to action a2, and (t3 - t1) e from (a2, t2) back to a1, with e as large
    as the masses allow.  Action marginals and obedience are unchanged.
    """
    if model.family not in MEAN_RECEIVER:
        raise NotApplicable("the three-point shift preserves obedience only when the receiver matches the mean",
                            family=model.family)
    entries: dict[tuple[float, float], float] = {}
    for a, t, m in zip(outcome.a, outcome.theta, outcome.mass):
        entries[(float(a), float(t))] = entries.get((float(a), float(t)), 0.0) + float(m)
    history = []
    for _ in range(max_iter):
        pts = np.array([k for k, v in entries.items() if v > 1e-15]).reshape(-1, 2)
        cur = Outcome.from_entries(pts[:, 0], pts[:, 1], [entries[tuple(p)] for p in pts], eps=0.0)
        history.append({"triples": count_peaked_triples(cur), "value": value_under(cur, model)})
        step = _next_shift(model, entries, pts, allow_value_decrease)
        if step is None:
            if history[-1]["triples"]:
                raise NotApplicable("remaining single-peaked triples cannot be removed without losing value")
            return cur, history
        (a1, t1), (a2, t2), (_, t3), eps = step
        moves = [((a1, t1), (a2, t1), (t3 - t2) * eps), ((a1, t3), (a2, t3), (t2 - t1) * eps),
                 ((a2, t2), (a1, t2), (t3 - t1) * eps)]
        for src, dst, amt in moves:
            entries[src] -= amt
            if entries[src] < 1e-15:
                entries.pop(src)
            entries[dst] = entries.get(dst, 0.0) + amt
    raise NotApplicable("triple removal did not terminate", iterations=max_iter)


def _next_shift(model, entries, pts, allow_value_decrease):
    acts = np.unique(pts[:, 0])
    for a1 in acts:
        sec = np.sort(pts[pts[:, 0] == a1, 1])
        if sec.size < 2:
            continue
        for t1, t3 in itertools.combinations(sec, 2):
            for a2, t2 in pts[(pts[:, 0] > a1) & (pts[:, 1] > t1) & (pts[:, 1] < t3)]:
                eps = min(entries[(a1, t1)] / (t3 - t2), entries[(a2, t2)] / (t3 - t1), entries[(a1, t3)] / (t2 - t1))
                y = np.array([t3 - t2, t3 - t1, t2 - t1]) * eps
                gain = float(r_matrix(model, a1, a2, t1, t2, t3)[0] @ y)
                if gain >= -1e-15 or allow_value_decrease:
                    return (a1, t1), (a2, t2), (a1, t3), eps
    return None
