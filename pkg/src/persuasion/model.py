"""Preference models, priors and the receiver's side of the game.

A :class:`PreferenceModel` bundles vectorised callables ``V(a, theta)``,
``v(a, theta)``, ``u(a, theta)`` and ``u_a(a, theta)`` (plus optional
second-order partials) together with the action and state rectangles.  All
callables broadcast over numpy arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import integrate, special

from .exceptions import BoundaryOptimum, InvalidModel, InvalidPrior, NoRoot

FAMILIES = (
    "simple",
    "simple_receiver",
    "simple_sender",
    "translation_invariant",
    "contest",
    "quantile",
    "custom",
)

BISECT_WIDTH = 1e-12
BISECT_MAX_ITER = 200
ROOT_RESIDUAL = 1e-10
FD_REL_STEP = 1e-5

Fn = Callable[[np.ndarray, np.ndarray], np.ndarray]


def _const(value: float) -> Fn:
    def f(a, t):
        return np.full(np.broadcast(np.asarray(a), np.asarray(t)).shape, float(value))

    return f


@dataclass(frozen=True, eq=False)
class PreferenceModel:
    family: str
    V: Fn
    v: Fn
    u: Fn
    u_a: Fn
    a_bounds: tuple[float, float]
    theta_bounds: tuple[float, float]
    v_theta: Optional[Fn] = None
    u_theta: Optional[Fn] = None
    u_atheta: Optional[Fn] = None
    v_a: Optional[Fn] = None
    u_aa: Optional[Fn] = None
    params: dict = field(default_factory=dict)
    kappa: Optional[float] = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise InvalidModel(f"unknown family {self.family!r}", family=self.family)
        for name in ("a_bounds", "theta_bounds"):
            lo, hi = getattr(self, name)
            if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
                raise InvalidModel(f"{name} must be a finite increasing pair", **{name: (lo, hi)})
        if self.family == "quantile" and not (self.kappa is not None and 0.0 < self.kappa < 1.0):
            raise InvalidModel("quantile family needs kappa in (0, 1)", kappa=self.kappa)

    @property
    def a_span(self) -> float:
        return self.a_bounds[1] - self.a_bounds[0]

    @property
    def theta_span(self) -> float:
        return self.theta_bounds[1] - self.theta_bounds[0]

    @property
    def has_analytic_second_order(self) -> bool:
        return all(
            getattr(self, n) is not None for n in ("v_theta", "u_theta", "u_atheta", "v_a", "u_aa")
        )

    def partial(self, name: str) -> Fn:
        """Analytic partial if supplied, otherwise a central difference.

        ``name`` is one of v_theta, u_theta, u_atheta, v_a, u_aa.  The
        fallback step is ``1e-5`` times the span of the differentiated axis.
        """
        f = getattr(self, name)
        if f is not None:
            return f
        base, axis = {
            "v_theta": (self.v, "theta"),
            "u_theta": (self.u, "theta"),
            "u_atheta": (self.u_a, "theta"),
            "v_a": (self.v, "a"),
            "u_aa": (self.u_a, "a"),
        }[name]
        if axis == "theta":
            h = FD_REL_STEP * self.theta_span

            def d(a, t):
                t = np.asarray(t, dtype=float)
                return (base(a, t + h) - base(a, t - h)) / (2 * h)

        else:
            h = FD_REL_STEP * self.a_span

            def d(a, t):
                a = np.asarray(a, dtype=float)
                return (base(a + h, t) - base(a - h, t)) / (2 * h)

        return d

    def describe(self) -> dict:
        return {
            "family": self.family,
            "parameters": dict(self.params),
            "a_bounds": list(self.a_bounds),
            "theta_bounds": list(self.theta_bounds),
        }


# --------------------------------------------------------------------------
# family constructors


def _poly(coeffs):
    c = np.asarray(coeffs, dtype=float)
    p = np.polynomial.Polynomial(c)
    return p, p.deriv(1), p.deriv(2), p.deriv(3)


def _sender_curve(kind: str, params: dict):
    """Return G, G', G'' for the scalar sender utility used by simple cases."""
    if kind == "poly":
        p, d1, d2, _ = _poly(params.get("coeffs", [0.0, 1.0]))
        return (lambda a: p(a)), (lambda a: d1(a)), (lambda a: d2(a))
    if kind == "hinge_square":
        k = float(params.get("knot", 0.5))
        return (
            lambda a: np.maximum(np.asarray(a, dtype=float) - k, 0.0) ** 2,
            lambda a: 2.0 * np.maximum(np.asarray(a, dtype=float) - k, 0.0),
            lambda a: np.where(np.asarray(a, dtype=float) > k, 2.0, 0.0),
        )
    if kind == "sine":
        w = float(params.get("freq", 3 * math.pi))
        return (lambda a: np.sin(w * a)), (lambda a: w * np.cos(w * a)), (lambda a: -w * w * np.sin(w * a))
    if kind == "gauss_cdf":
        # G(a) = T(c a) with T the unnormalised Gaussian integral
        c = float(params.get("scale", 2.0))
        return (
            lambda a: gauss_T(c * np.asarray(a, dtype=float)),
            lambda a: c * gauss_T1(c * np.asarray(a, dtype=float)),
            lambda a: c * c * gauss_T2(c * np.asarray(a, dtype=float)),
        )
    raise InvalidModel(f"unknown sender curve {kind!r}", kind=kind)


def gauss_T(y):
    """T(y) = integral of exp(-s^2/2) from 0 to y."""
    return math.sqrt(math.pi / 2) * special.erf(np.asarray(y, dtype=float) / math.sqrt(2))


def gauss_T1(y):
    y = np.asarray(y, dtype=float)
    return np.exp(-0.5 * y * y)


def gauss_T2(y):
    y = np.asarray(y, dtype=float)
    return -y * np.exp(-0.5 * y * y)


def gauss_T3(y):
    y = np.asarray(y, dtype=float)
    return (y * y - 1.0) * np.exp(-0.5 * y * y)


def _b(a, t):
    a = np.asarray(a, dtype=float)
    t = np.asarray(t, dtype=float)
    return np.broadcast_arrays(a, t)


def _mean_receiver():
    """u = theta - a and its derivatives."""
    return dict(
        u=lambda a, t: np.subtract(*_b(t, a)),
        u_a=_const(-1.0),
        u_theta=_const(1.0),
        u_atheta=_const(0.0),
        u_aa=_const(0.0),
    )


def simple(curve: str = "poly", a_bounds=(0.0, 1.0), theta_bounds=(0.0, 1.0), **params) -> PreferenceModel:
    """Sender utility depends on the action only; receiver matches the mean."""
    G, G1, G2 = _sender_curve(curve, params)
    return PreferenceModel(
        family="simple",
        V=lambda a, t: G(_b(a, t)[0]),
        v=lambda a, t: G1(_b(a, t)[0]),
        v_theta=_const(0.0),
        v_a=lambda a, t: G2(_b(a, t)[0]),
        a_bounds=tuple(a_bounds),
        theta_bounds=tuple(theta_bounds),
        params={"curve": curve, **params},
        **_mean_receiver(),
    )


def simple_receiver(
    V: Fn,
    v: Fn,
    v_theta: Optional[Fn] = None,
    v_a: Optional[Fn] = None,
    a_bounds=(0.0, 1.0),
    theta_bounds=(0.0, 1.0),
    **params,
) -> PreferenceModel:
    """Receiver matches the posterior mean; sender utility is arbitrary."""
    return PreferenceModel(
        family="simple_receiver",
        V=V,
        v=v,
        v_theta=v_theta,
        v_a=v_a,
        a_bounds=tuple(a_bounds),
        theta_bounds=tuple(theta_bounds),
        params=params,
        **_mean_receiver(),
    )


def linear_in_action(weight: str = "power", a_bounds=(0.0, 1.0), theta_bounds=(0.0, 1.0), **params):
    """Simple receiver with V(a, theta) = a * w(theta)."""
    if weight == "power":
        k = float(params.get("exponent", 1.0))
        s = float(params.get("scale", 1.0))
        w = lambda t: s * np.asarray(t, dtype=float) ** k  # noqa: E731
        w1 = lambda t: s * k * np.asarray(t, dtype=float) ** (k - 1)  # noqa: E731
    elif weight == "poly":
        p, d1, _, _ = _poly(params.get("coeffs", [0.0, 1.0]))
        w = lambda t: p(np.asarray(t, dtype=float))  # noqa: E731
        w1 = lambda t: d1(np.asarray(t, dtype=float))  # noqa: E731
    else:
        raise InvalidModel(f"unknown weight {weight!r}", weight=weight)
    return simple_receiver(
        V=lambda a, t: np.multiply(*_b(a, w(t))),
        v=lambda a, t: w(_b(a, t)[1]),
        v_theta=lambda a, t: w1(_b(a, t)[1]),
        v_a=_const(0.0),
        a_bounds=a_bounds,
        theta_bounds=theta_bounds,
        weight=weight,
        **params,
    )


def translation_invariant(coeffs=(0.0, 0.0, 1.0), a_bounds=(0.0, 1.0), theta_bounds=(0.0, 1.0)) -> PreferenceModel:
    """Simple receiver with V(a, theta) = P(a - theta), P a polynomial."""
    p, d1, d2, _ = _poly(coeffs)
    m = simple_receiver(
        V=lambda a, t: p(np.subtract(*_b(a, t))),
        v=lambda a, t: d1(np.subtract(*_b(a, t))),
        v_theta=lambda a, t: -d2(np.subtract(*_b(a, t))),
        v_a=lambda a, t: d2(np.subtract(*_b(a, t))),
        a_bounds=a_bounds,
        theta_bounds=theta_bounds,
        coeffs=list(map(float, coeffs)),
    )
    return _retag(m, "translation_invariant")


def _retag(m: PreferenceModel, family: str) -> PreferenceModel:
    return PreferenceModel(**{**m.__dict__, "family": family})


def simple_sender(
    curve: str = "gauss_cdf",
    receiver: str = "gauss",
    a_bounds=(-1.0, 3.0),
    theta_bounds=(-1.0, 3.0),
    **params,
) -> PreferenceModel:
    """Sender utility depends on the action only; receiver utility is T(theta - a)."""
    G, G1, G2 = _sender_curve(curve, params)
    if receiver == "gauss":
        T, T1, T2 = gauss_T, gauss_T1, gauss_T2
    elif receiver == "linear":
        T, T1, T2 = (lambda y: np.asarray(y, dtype=float)), (lambda y: np.ones_like(np.asarray(y, dtype=float))), (
            lambda y: np.zeros_like(np.asarray(y, dtype=float))
        )
    else:
        raise InvalidModel(f"unknown receiver curve {receiver!r}", receiver=receiver)

    def d(a, t):
        a, t = _b(a, t)
        return t - a

    return PreferenceModel(
        family="simple_sender",
        V=lambda a, t: G(_b(a, t)[0]),
        v=lambda a, t: G1(_b(a, t)[0]),
        v_theta=_const(0.0),
        v_a=lambda a, t: G2(_b(a, t)[0]),
        u=lambda a, t: T(d(a, t)),
        u_a=lambda a, t: -T1(d(a, t)),
        u_theta=lambda a, t: T1(d(a, t)),
        u_atheta=lambda a, t: -T2(d(a, t)),
        u_aa=lambda a, t: T2(d(a, t)),
        a_bounds=tuple(a_bounds),
        theta_bounds=tuple(theta_bounds),
        params={"curve": curve, "receiver": receiver, **params},
    )


def contest(lo: float = 0.2, hi: float = 0.5) -> PreferenceModel:
    """V = a / theta, u = theta - (1 + theta^2) a on a positive state interval."""
    lo, hi = float(lo), float(hi)
    if not (0.0 < lo < hi):
        raise InvalidModel("contest support must satisfy 0 < lo < hi", lo=lo, hi=hi)
    peak = np.array([lo, hi, 1.0]) if lo < 1.0 < hi else np.array([lo, hi])
    acts = peak / (1 + peak**2)
    return PreferenceModel(
        family="contest",
        V=lambda a, t: np.divide(*_b(a, t)),
        v=lambda a, t: 1.0 / _b(a, t)[1],
        v_theta=lambda a, t: -1.0 / _b(a, t)[1] ** 2,
        v_a=_const(0.0),
        u=lambda a, t: (lambda A, T: T - (1 + T * T) * A)(*_b(a, t)),
        u_a=lambda a, t: -(1 + _b(a, t)[1] ** 2),
        u_theta=lambda a, t: (lambda A, T: 1 - 2 * T * A)(*_b(a, t)),
        u_atheta=lambda a, t: -2 * _b(a, t)[1],
        u_aa=_const(0.0),
        a_bounds=(float(acts.min()), float(acts.max())),
        theta_bounds=(lo, hi),
        params={"lo": lo, "hi": hi},
    )


def contest_twist_closed_form(t1, t2, t3):
    """Closed form of the twist determinant for the contest model."""
    t1, t2, t3 = (np.asarray(x, dtype=float) for x in (t1, t2, t3))
    return (t3 - t2) * (t3 - t1) * (t2 - t1) * (1 - t2 * t3 - t1 * t3 - t1 * t2) / (t1 * t2 * t3)


def quantile(kappa: float = 0.5, curve: str = "poly", theta_bounds=(0.0, 1.0), **params) -> PreferenceModel:
    """Receiver picks the kappa-quantile: u = 1{theta >= a} - kappa."""
    kappa = float(kappa)
    G, G1, G2 = _sender_curve(curve, params)

    def u(a, t):
        a, t = _b(a, t)
        return np.where(t >= a, 1.0, 0.0) - kappa

    return PreferenceModel(
        family="quantile",
        V=lambda a, t: G(_b(a, t)[0]),
        v=lambda a, t: G1(_b(a, t)[0]),
        v_theta=_const(0.0),
        v_a=lambda a, t: G2(_b(a, t)[0]),
        u=u,
        u_a=_const(0.0),
        u_theta=_const(0.0),
        u_atheta=_const(0.0),
        u_aa=_const(0.0),
        a_bounds=tuple(theta_bounds),
        theta_bounds=tuple(theta_bounds),
        params={"kappa": kappa, "curve": curve, **params},
        kappa=kappa,
    )


def tabulated(a_grid, theta_grid, V, v, u, u_a) -> PreferenceModel:
    """Custom model from tabulated values, bilinearly interpolated."""
    from scipy.interpolate import RegularGridInterpolator

    a_grid = np.asarray(a_grid, dtype=float)
    theta_grid = np.asarray(theta_grid, dtype=float)
    tables = {}
    for name, val in dict(V=V, v=v, u=u, u_a=u_a).items():
        arr = np.asarray(val, dtype=float)
        if arr.shape != (a_grid.size, theta_grid.size):
            raise InvalidModel(f"table {name} has shape {arr.shape}", expected=(a_grid.size, theta_grid.size))
        tables[name] = RegularGridInterpolator((a_grid, theta_grid), arr)

    def wrap(interp):
        def f(a, t):
            A, T = _b(a, t)
            return interp(np.stack([A.ravel(), T.ravel()], axis=-1)).reshape(A.shape)

        return f

    return PreferenceModel(
        family="custom",
        a_bounds=(float(a_grid[0]), float(a_grid[-1])),
        theta_bounds=(float(theta_grid[0]), float(theta_grid[-1])),
        **{k: wrap(t) for k, t in tables.items()},
    )


# --------------------------------------------------------------------------
# priors and posteriors


_DENSITIES = {}


def _density(name):
    def reg(fn):
        _DENSITIES[name] = fn
        return fn

    return reg


@_density("uniform")
def _uniform(lo, hi):
    w = hi - lo
    return (lambda t: np.where((t >= lo) & (t <= hi), 1.0 / w, 0.0)), (lambda t: np.clip((t - lo) / w, 0.0, 1.0))


@_density("reciprocal")
def _reciprocal(lo, hi):
    if lo <= 0:
        raise InvalidPrior("reciprocal density needs a positive support", lo=lo)
    z = math.log(hi / lo)
    return (
        lambda t: np.where((t >= lo) & (t <= hi), 1.0 / (z * np.maximum(t, lo)), 0.0),
        lambda t: np.log(np.clip(t, lo, hi) / lo) / z,
    )


@_density("step")
def _step(lo, hi, cut=0.0, left=0.7):
    """Piecewise constant: mass ``left`` spread evenly on [lo, cut), the rest on [cut, hi]."""
    a, b = left / (cut - lo), (1 - left) / (hi - cut)

    def f(t):
        return np.where((t >= lo) & (t < cut), a, np.where((t >= cut) & (t <= hi), b, 0.0))

    def F(t):
        t = np.clip(t, lo, hi)
        return np.where(t < cut, a * (t - lo), left + b * (t - cut))

    return f, F


@dataclass(frozen=True, eq=False)
class Prior:
    """Either finitely many atoms or a density on a bounded interval."""

    kind: str
    support: tuple[float, float]
    atoms: Optional[np.ndarray] = None
    weights: Optional[np.ndarray] = None
    pdf: Optional[Callable] = None
    cdf: Optional[Callable] = None
    name: str = ""
    params: dict = field(default_factory=dict)

    @property
    def has_atoms(self) -> bool:
        return self.kind == "atoms"

    def masses_on(self, theta_grid: np.ndarray) -> np.ndarray:
        """Mass attached to each node of ``theta_grid``.

        Atoms must sit on grid nodes.  A density is integrated over the cells
        bounded by the midpoints between consecutive nodes.
        """
        g = np.asarray(theta_grid, dtype=float)
        if self.has_atoms:
            idx = np.searchsorted(g, self.atoms)
            idx = np.clip(idx, 0, g.size - 1)
            left = np.clip(idx - 1, 0, g.size - 1)
            pick = np.where(np.abs(g[left] - self.atoms) < np.abs(g[idx] - self.atoms), left, idx)
            if np.any(np.abs(g[pick] - self.atoms) > 1e-12 * (1 + np.abs(self.atoms))):
                raise InvalidPrior("every atom must coincide with a state-grid node")
            m = np.zeros(g.size)
            np.add.at(m, pick, self.weights)
            return m
        edges = np.concatenate(([self.support[0]], 0.5 * (g[1:] + g[:-1]), [self.support[1]]))
        F = self.cdf(edges)
        m = np.diff(F)
        return m / m.sum()

    def mean_of(self, fn: Callable) -> float:
        if self.has_atoms:
            return float(np.dot(self.weights, fn(self.atoms)))
        val, _ = integrate.quad(lambda t: float(fn(t) * self.pdf(t)), *self.support, limit=200)
        return val

    def describe(self) -> dict:
        out = {"kind": self.kind, "support": list(self.support)}
        if self.has_atoms:
            out["atoms"] = [[float(t), float(w)] for t, w in zip(self.atoms, self.weights)]
        else:
            out["density_name"] = self.name
            if self.params:
                out["density_params"] = dict(self.params)
        return out


def atoms_prior(atoms, weights=None) -> Prior:
    t = np.asarray(atoms, dtype=float)
    w = np.full(t.size, 1.0 / t.size) if weights is None else np.asarray(weights, dtype=float)
    if t.ndim != 1 or t.size == 0 or w.shape != t.shape:
        raise InvalidPrior("atoms and weights must be matching non-empty vectors")
    if np.any(w < 0) or not np.all(np.isfinite(t)):
        raise InvalidPrior("weights must be non-negative and atoms finite")
    if abs(w.sum() - 1.0) > 1e-9:
        raise InvalidPrior("atom weights must sum to 1", total=float(w.sum()))
    order = np.argsort(t, kind="stable")
    t, w = t[order], w[order] / w.sum()
    if np.any(np.diff(t) <= 0):
        raise InvalidPrior("atoms must be distinct")
    return Prior(kind="atoms", support=(float(t[0]), float(t[-1])), atoms=t, weights=w)


def density_prior(name: str, support, **params) -> Prior:
    if name not in _DENSITIES:
        raise InvalidPrior(f"unknown density {name!r}", known=sorted(_DENSITIES))
    lo, hi = map(float, support)
    if not lo < hi:
        raise InvalidPrior("density support must be an increasing pair", support=(lo, hi))
    pdf, cdf = _DENSITIES[name](lo, hi, **params)
    total, _ = integrate.quad(lambda t: float(pdf(np.asarray(t))), lo, hi, limit=200, points=_breaks(params))
    if abs(total - 1.0) > 1e-8:
        raise InvalidPrior("density does not integrate to one", total=total)
    return Prior(kind="density", support=(lo, hi), pdf=pdf, cdf=cdf, name=name, params=params)


def _breaks(params):
    return [params["cut"]] if "cut" in params else None


@dataclass(frozen=True)
class Posterior:
    theta: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.theta, dtype=float)
        w = np.asarray(self.weights, dtype=float)
        if t.shape != w.shape or t.ndim != 1 or t.size == 0:
            raise InvalidPrior("posterior needs matching 1-d state and weight vectors")
        if np.any(np.diff(t) <= 0):
            raise InvalidPrior("posterior states must be strictly increasing")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise InvalidPrior("posterior weights must be non-negative and sum to one")
        object.__setattr__(self, "theta", t)
        object.__setattr__(self, "weights", w)


# --------------------------------------------------------------------------
# receiver side


def bisect(fun, lo, hi, width=BISECT_WIDTH, max_iter=BISECT_MAX_ITER):
    """Vectorised bisection for a sign change of ``fun`` on [lo, hi]."""
    lo = np.array(lo, dtype=float, copy=True)
    hi = np.array(hi, dtype=float, copy=True)
    flo = np.sign(fun(lo))
    for _ in range(max_iter):
        if np.all(hi - lo <= width):
            break
        mid = 0.5 * (lo + hi)
        fm = np.sign(fun(mid))
        keep = (fm == flo) & (fm != 0)
        lo = np.where(keep, mid, lo)
        hi = np.where(keep, hi, mid)
        done = fm == 0
        lo = np.where(done, mid, lo)
        hi = np.where(done, mid, hi)
    return 0.5 * (lo + hi)


def _zero_band(vals) -> float:
    return 1e-13 * (1.0 + float(np.max(np.abs(vals))) if np.size(vals) else 1.0)


def theta_star_many(model: PreferenceModel, a) -> np.ndarray:
    """Vectorised state at which the receiver is indifferent; NaN where none."""
    a = np.atleast_1d(np.asarray(a, dtype=float))
    lo_t, hi_t = model.theta_bounds
    if model.family == "quantile":
        return np.where((a >= lo_t) & (a <= hi_t), a, np.nan)
    ulo = model.u(a, np.full_like(a, lo_t))
    uhi = model.u(a, np.full_like(a, hi_t))
    band = 1e-13 * (1 + np.maximum(np.abs(ulo), np.abs(uhi)))
    zlo = np.abs(ulo) <= band
    zhi = np.abs(uhi) <= band
    ok = (np.sign(ulo) != np.sign(uhi)) | zlo | zhi
    root = bisect(lambda t: model.u(a, t), np.full_like(a, lo_t), np.full_like(a, hi_t))
    root = np.where(zlo, lo_t, np.where(zhi, hi_t, root))
    return np.where(ok, root, np.nan)


def theta_star(model: PreferenceModel, a: float) -> float:
    """Unique state with u(a, theta) = 0.  Raises :class:`NoRoot` if u keeps its sign."""
    r = float(theta_star_many(model, [a])[0])
    if math.isnan(r):
        raise NoRoot("u(a, .) has constant sign on the state interval", a=float(a))
    return r


def best_response_many(model: PreferenceModel, theta, weights, strict: bool = True) -> np.ndarray:
    """Receiver optimal actions for a batch of finite posteriors.

    ``theta`` and ``weights`` have shape (k, s); rows are posteriors.  With
    ``strict`` a boundary optimum raises, otherwise the bound is returned.
    """
    T = np.atleast_2d(np.asarray(theta, dtype=float))
    W = np.atleast_2d(np.asarray(weights, dtype=float))
    lo_a, hi_a = model.a_bounds
    if model.family == "quantile":
        return _quantile_best_response(model.kappa, T, W, lo_a)

    def g(a):
        return np.sum(W * model.u(a[:, None], T), axis=1)

    k = T.shape[0]
    glo = g(np.full(k, lo_a))
    ghi = g(np.full(k, hi_a))
    band = 1e-13 * (1 + np.abs(glo) + np.abs(ghi))
    below = glo < -band
    above = ghi > band
    if strict and np.any(below | above):
        i = int(np.argmax(below | above))
        bound = "lower" if below[i] else "upper"
        raise BoundaryOptimum(bound=bound, action=lo_a if below[i] else hi_a, index=i)
    root = bisect(g, np.full(k, lo_a), np.full(k, hi_a))
    root = np.where(np.abs(glo) <= band, lo_a, root)
    root = np.where(np.abs(ghi) <= band, hi_a, root)
    return np.where(below, lo_a, np.where(above, hi_a, root))


def _quantile_best_response(kappa, T, W, lo_a):
    # largest a with mu([a, max]) >= kappa; ties resolved in favour of the upper state
    order = np.argsort(T, axis=1)
    T = np.take_along_axis(T, order, 1)
    W = np.take_along_axis(W, order, 1)
    upper = np.cumsum(W[:, ::-1], axis=1)[:, ::-1]
    ok = upper >= kappa - 1e-12
    idx = T.shape[1] - 1 - np.argmax(ok[:, ::-1], axis=1)
    return T[np.arange(T.shape[0]), idx]


def receiver_best_response(model: PreferenceModel, posterior: Posterior) -> float:
    """Action a with E_mu[u(a, theta)] = 0, found by bisection on the action set."""
    return float(best_response_many(model, posterior.theta[None, :], posterior.weights[None, :])[0])


@dataclass(frozen=True)
class CheckResult:
    ok: bool
    witness: Optional[tuple] = None
    detail: str = ""

    def to_dict(self):
        return {"ok": self.ok, "witness": None if self.witness is None else list(map(float, self.witness)), "detail": self.detail}


def check_aggregate_quasiconcavity(model: PreferenceModel, a_grid, theta_grid) -> CheckResult:
    """Grid check of the two conditions behind strict quasi-concavity of E[u].

    (1) u(a, theta) = 0 forces u_a(a, theta) < 0.
    (2) u(a, t) < 0 < u(a, t') forces u(a, t') u_a(a, t) - u(a, t) u_a(a, t') < 0.
    """
    A = np.asarray(a_grid, dtype=float)
    T = np.asarray(theta_grid, dtype=float)
    U = model.u(A[:, None], T[None, :])
    Ua = model.u_a(A[:, None], T[None, :])
    band = 1e-8 * max(float(np.max(np.abs(U))), 1e-300)
    zero = np.abs(U) <= band
    bad = zero & (Ua >= 0)
    if bad.any():
        i, j = np.argwhere(bad)[0]
        return CheckResult(False, (A[i], T[j]), "u vanishes where u_a is not negative")
    for i in range(A.size):
        neg = U[i] < -band
        pos = U[i] > band
        if not (neg.any() and pos.any()):
            continue
        cross = U[i, pos][None, :] * Ua[i, neg][:, None] - U[i, neg][:, None] * Ua[i, pos][None, :]
        if np.any(cross >= 0):
            r, c = np.argwhere(cross >= 0)[0]
            return CheckResult(False, (A[i], T[neg][r], T[pos][c]), "pairwise aggregate not decreasing")
    return CheckResult(True)


def check_strict_single_crossing(model: PreferenceModel, a_grid, theta_grid) -> CheckResult:
    """Once u(a, .) reaches zero it must be strictly positive at every larger node."""
    A = np.asarray(a_grid, dtype=float)
    T = np.asarray(theta_grid, dtype=float)
    U = model.u(A[:, None], T[None, :])
    band = 1e-8 * max(float(np.max(np.abs(U))), 1e-300)
    for i in range(A.size):
        reached = np.nonzero(U[i] >= -band)[0]
        if reached.size == 0:
            continue
        j = reached[0]
        later = np.nonzero(U[i, j + 1 :] <= band)[0]
        if later.size:
            return CheckResult(False, (A[i], T[j], T[j + 1 + later[0]]), "u(a, .) not strictly positive after its root")
    return CheckResult(True)


# --------------------------------------------------------------------------
# configuration


def model_from_config(cfg: dict) -> PreferenceModel:
    fam = cfg.get("family")
    p = dict(cfg.get("parameters", {}))
    try:
        if fam == "simple":
            return simple(**p)
        if fam == "simple_receiver":
            return linear_in_action(**p)
        if fam == "translation_invariant":
            return translation_invariant(**p)
        if fam == "simple_sender":
            return simple_sender(**p)
        if fam == "contest":
            return contest(**p)
        if fam == "quantile":
            return quantile(**p)
        if fam == "custom":
            return tabulated(**p)
    except TypeError as exc:
        raise InvalidModel(f"bad parameters for family {fam!r}: {exc}", family=fam) from exc
    raise InvalidModel(f"unknown family {fam!r}", family=fam, known=list(FAMILIES))


def prior_from_config(cfg: dict) -> Prior:
    kind = cfg.get("kind")
    if kind == "atoms":
        pairs = cfg.get("atoms")
        if not pairs:
            raise InvalidPrior("atoms prior needs a non-empty 'atoms' list of [theta, weight]")
        t, w = zip(*pairs)
        return atoms_prior(t, w)
    if kind == "density":
        if "density_name" not in cfg or "support" not in cfg:
            raise InvalidPrior("density prior needs 'density_name' and 'support'")
        return density_prior(cfg["density_name"], cfg["support"], **cfg.get("density_params", {}))
    raise InvalidPrior(f"unknown prior kind {kind!r}")
