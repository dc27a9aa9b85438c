"""Finite persuasion problems and their primal linear programme.

The primal has one variable per (action, state) node pair:

    max  sum V(a, t) x[a, t]
    s.t. sum_a x[a, t] = prior(t)              (one row per state node)
         sum_t u(a, t) x[a, t] = 0             (one row per action node)
         x >= 0

Obedience rows are divided by max_t |u(a, t)| before solving and their
duals multiplied back afterwards.  Actions whose u(a, .) is strictly
positive or strictly negative at every state node can carry no mass and are
dropped together with their columns.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .exceptions import GridTooLarge, InvalidPrior
from .model import PreferenceModel, Prior, bisect
from .simplex import simplex_max

VAR_CAP = 250_000
MASS_EPS = 1e-12
U_SNAP = 1e-10


@dataclass(eq=False)
class DiscreteProblem:
    """Finite action and state grids with tabulated utilities."""

    model: PreferenceModel
    a_grid: np.ndarray
    theta_grid: np.ndarray
    prior_mass: np.ndarray
    V: np.ndarray = field(repr=False, default=None)
    U: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        self.a_grid = np.asarray(self.a_grid, dtype=float)
        self.theta_grid = np.asarray(self.theta_grid, dtype=float)
        self.prior_mass = np.asarray(self.prior_mass, dtype=float)
        if np.any(np.diff(self.a_grid) <= 0) or np.any(np.diff(self.theta_grid) <= 0):
            raise InvalidPrior("grids must be strictly increasing")
        if self.prior_mass.shape != self.theta_grid.shape or np.any(self.prior_mass < 0):
            raise InvalidPrior("prior masses must be non-negative and match the state grid")
        if abs(self.prior_mass.sum() - 1.0) > 1e-9:
            raise InvalidPrior("prior masses must sum to one", total=float(self.prior_mass.sum()))
        A, T = self.a_grid[:, None], self.theta_grid[None, :]
        if self.V is None:
            self.V = np.asarray(self.model.V(A, T), dtype=float)
        if self.U is None:
            U = np.asarray(self.model.u(A, T), dtype=float)
            # matched actions solve u = 0 only to bisection accuracy
            snap = U_SNAP * (1.0 + np.max(np.abs(U), axis=1, keepdims=True))
            self.U = np.where(np.abs(U) <= snap, 0.0, U)

    @property
    def shape(self) -> tuple[int, int]:
        return self.a_grid.size, self.theta_grid.size

    @property
    def support(self) -> np.ndarray:
        return self.prior_mass > 0


def matched_actions(model: PreferenceModel, theta_grid) -> np.ndarray:
    """Receiver's best response to each degenerate belief on the state grid."""
    t = np.asarray(theta_grid, dtype=float)
    lo, hi = model.a_bounds
    if model.family == "quantile":
        return np.unique(t)
    g = lambda a: model.u(a, t)  # noqa: E731
    a = bisect(g, np.full_like(t, lo), np.full_like(t, hi))
    a = np.where(np.abs(model.u(lo, t)) <= 1e-14, lo, a)
    a = np.where(np.abs(model.u(hi, t)) <= 1e-14, hi, a)
    return _dedupe(np.sort(a))


def _dedupe(x, tol=1e-12):
    keep = np.concatenate(([True], np.diff(x) > tol * (1 + np.abs(x[1:]))))
    return x[keep]


def make_problem(
    model: PreferenceModel,
    prior: Prior,
    grid_a: int = 201,
    grid_theta: int = 201,
    a_mode: str = "uniform",
    extra_actions=(),
) -> DiscreteProblem:
    """Discretise a model and prior.

    ``a_mode`` picks the action grid: ``uniform`` over the action bounds,
    ``matched`` (best responses to each state node) or ``union`` of both.
    Atom priors use their atoms as the state grid; densities get a uniform
    grid of ``grid_theta`` nodes with cell-integrated masses.
    """
    if prior.has_atoms:
        theta = prior.atoms.copy()
    else:
        theta = np.linspace(*prior.support, int(grid_theta))
    mass = prior.masses_on(theta)
    if a_mode == "uniform":
        a = np.linspace(*model.a_bounds, int(grid_a))
    elif a_mode == "matched":
        a = matched_actions(model, theta)
    elif a_mode == "union":
        a = np.concatenate([np.linspace(*model.a_bounds, int(grid_a)), matched_actions(model, theta)])
    else:
        raise ValueError(f"unknown action grid mode {a_mode!r}")
    if len(extra_actions):
        a = np.concatenate([a, np.asarray(extra_actions, dtype=float)])
    a = _dedupe(np.sort(a))
    if a.size * theta.size > VAR_CAP:
        raise GridTooLarge("grid exceeds the variable cap", variables=int(a.size * theta.size), cap=VAR_CAP)
    return DiscreteProblem(model=model, a_grid=a, theta_grid=theta, prior_mass=mass)


@dataclass
class PrimalLP:
    c: np.ndarray
    A: sp.csc_matrix
    b: np.ndarray
    col_a: np.ndarray
    col_t: np.ndarray
    kept_actions: np.ndarray
    row_scale: np.ndarray

    @property
    def n_vars(self) -> int:
        return self.c.size

    @property
    def n_rows(self) -> int:
        return self.b.size


def build_primal(problem: DiscreteProblem, var_cap: int = VAR_CAP) -> PrimalLP:
    """Assemble the sparse primal LP.  Raises :class:`GridTooLarge` above ``var_cap``."""
    m, n = problem.shape
    if m * n > var_cap:
        raise GridTooLarge("grid exceeds the variable cap", variables=m * n, cap=var_cap)
    U = problem.U
    kept = ~(np.all(U > 0, axis=1) | np.all(U < 0, axis=1))
    ka = np.nonzero(kept)[0]
    k = ka.size
    scale = 1.0 / np.maximum(np.max(np.abs(U[ka]), axis=1), 1e-300)
    col_a = np.repeat(ka, n)
    col_t = np.tile(np.arange(n), k)
    ncol = col_a.size
    arow = n + np.repeat(np.arange(k), n)
    rows = np.concatenate([col_t, arow])
    cols = np.concatenate([np.arange(ncol), np.arange(ncol)])
    vals = np.concatenate([np.ones(ncol), (U[ka] * scale[:, None]).ravel()])
    A = sp.csc_matrix((vals, (rows, cols)), shape=(n + k, ncol))
    b = np.concatenate([problem.prior_mass, np.zeros(k)])
    c = problem.V[col_a, col_t]
    return PrimalLP(c=c, A=A, b=b, col_a=col_a, col_t=col_t, kept_actions=ka, row_scale=scale)


@dataclass
class Outcome:
    """Sparse joint distribution over (action, state)."""

    a_values: np.ndarray
    theta_values: np.ndarray
    a_idx: np.ndarray
    theta_idx: np.ndarray
    mass: np.ndarray

    @classmethod
    def from_entries(cls, a, theta, mass, eps: float = MASS_EPS) -> "Outcome":
        a = np.asarray(a, dtype=float)
        theta = np.asarray(theta, dtype=float)
        mass = np.asarray(mass, dtype=float)
        keep = mass > eps
        av, ai = np.unique(a[keep], return_inverse=True)
        tv, ti = np.unique(theta[keep], return_inverse=True)
        out = cls(av, tv, ai.ravel(), ti.ravel(), mass[keep])
        return out.merged()

    def merged(self) -> "Outcome":
        key = self.a_idx * max(self.theta_values.size, 1) + self.theta_idx
        uk, inv = np.unique(key, return_inverse=True)
        m = np.zeros(uk.size)
        np.add.at(m, inv.ravel(), self.mass)
        nt = max(self.theta_values.size, 1)
        return Outcome(self.a_values, self.theta_values, uk // nt, uk % nt, m)

    @property
    def a(self) -> np.ndarray:
        return self.a_values[self.a_idx]

    @property
    def theta(self) -> np.ndarray:
        return self.theta_values[self.theta_idx]

    @property
    def support_size(self) -> int:
        return int(self.mass.size)

    def action_marginal(self) -> tuple[np.ndarray, np.ndarray]:
        m = np.zeros(self.a_values.size)
        np.add.at(m, self.a_idx, self.mass)
        used = m > 0
        return self.a_values[used], m[used]

    def state_marginal(self) -> tuple[np.ndarray, np.ndarray]:
        m = np.zeros(self.theta_values.size)
        np.add.at(m, self.theta_idx, self.mass)
        return self.theta_values, m

    def sections(self) -> dict[float, tuple[np.ndarray, np.ndarray]]:
        """Map each used action to its (states, masses), states ascending."""
        out = {}
        order = np.lexsort((self.theta_idx, self.a_idx))
        ai, ti, ms = self.a_idx[order], self.theta_idx[order], self.mass[order]
        for k in np.unique(ai):
            sel = ai == k
            out[float(self.a_values[k])] = (self.theta_values[ti[sel]], ms[sel])
        return out

    def obedience_residuals(self, model: PreferenceModel) -> np.ndarray:
        r = np.zeros(self.a_values.size)
        np.add.at(r, self.a_idx, self.mass * model.u(self.a, self.theta))
        return r

    def to_rows(self) -> list[tuple[float, float, float]]:
        order = np.lexsort((self.theta, self.a))
        return [(float(self.a[i]), float(self.theta[i]), float(self.mass[i])) for i in order]


def value_under(outcome: Outcome, model: PreferenceModel) -> float:
    """Sender's expected utility of ``outcome``."""
    return float(np.sum(outcome.mass * model.V(outcome.a, outcome.theta)))


@dataclass
class LpSolution:
    value: float
    outcome: Outcome
    dual_row_prices: np.ndarray
    dual_obedience: np.ndarray
    status: str
    gap: float
    iterations: int
    runtime: float
    n_vars: int
    n_rows: int
    basis: Optional[np.ndarray] = None

    def summary(self) -> dict:
        return {
            "value": self.value,
            "status": self.status,
            "gap": self.gap,
            "support_size": self.outcome.support_size,
            "iterations": self.iterations,
            "runtime_s": self.runtime,
            "variables": self.n_vars,
            "rows": self.n_rows,
        }

    def summary_json(self) -> str:
        return json.dumps(self.summary(), indent=2, sort_keys=True)


def solve_lp(
    problem: DiscreteProblem,
    tol: float = 1e-9,
    var_cap: int = VAR_CAP,
    column_seed: Optional[int] = None,
    perturb_seed: int = 0,
) -> LpSolution:
    """Solve the primal by the in-house simplex and read duals off the basis.

    ``column_seed`` shuffles the column order, which changes pivot choices
    and usually the optimal basis reached; used to probe uniqueness.
    """
    t0 = time.perf_counter()
    lp = build_primal(problem, var_cap)
    perm = np.arange(lp.n_vars)
    if column_seed is not None:
        perm = np.random.default_rng(column_seed).permutation(lp.n_vars)
    res = simplex_max(lp.c[perm], lp.A[:, perm], lp.b, tol=tol, seed=perturb_seed)
    x = np.empty(lp.n_vars)
    x[perm] = res.x
    m, n = problem.shape
    p = res.y[:n]
    q = np.full(m, np.nan)
    q[lp.kept_actions] = -res.y[n:] * lp.row_scale
    out = Outcome.from_entries(problem.a_grid[lp.col_a], problem.theta_grid[lp.col_t], x)
    value = float(lp.c @ x)
    gap = value - float(p @ problem.prior_mass)
    return LpSolution(
        value=value,
        outcome=out,
        dual_row_prices=p,
        dual_obedience=q,
        status="optimal",
        gap=gap,
        iterations=res.iterations,
        runtime=time.perf_counter() - t0,
        n_vars=lp.n_vars,
        n_rows=lp.n_rows,
        basis=res.basis,
    )


def refine_actions(
    problem: DiscreteProblem, rounds: int = 3, factor: int = 10, reach: int = 2, **solve_kw
) -> tuple[DiscreteProblem, LpSolution]:
    """Re-solve with action nodes added around every used action.

    Each round divides the local spacing by ``factor`` and covers ``reach``
    old spacings on either side of each used action.  On a coarse grid an
    optimal conditional can mix three or more states only because the exact
    optimal actions are missing; refinement lets the solution approach them.
    """
    sol = solve_lp(problem, **solve_kw)
    lo, hi = problem.model.a_bounds
    h = float(np.median(np.diff(problem.a_grid))) if problem.a_grid.size > 1 else 0.0
    for _ in range(rounds if h > 0 else 0):
        used = sol.outcome.action_marginal()[0]
        h /= factor
        offsets = h * np.arange(-reach * factor, reach * factor + 1)
        extra = (used[:, None] + offsets[None, :]).ravel()
        a = _dedupe(np.sort(np.concatenate([problem.a_grid, extra[(extra >= lo) & (extra <= hi)]])))
        problem = DiscreteProblem(problem.model, a, problem.theta_grid, problem.prior_mass)
        sol = solve_lp(problem, **solve_kw)
    return problem, sol


def duality_gap(solution: LpSolution, problem: DiscreteProblem) -> float:
    """Primal value minus the dual objective sum_t p(t) prior(t)."""
    return solution.value - float(solution.dual_row_prices @ problem.prior_mass)


def complementary_slackness(solution: LpSolution, problem: DiscreteProblem) -> float:
    """Largest |x * reduced cost| over all columns, with the unscaled duals."""
    p, q = solution.dual_row_prices, np.nan_to_num(solution.dual_obedience)
    slack = p[None, :] - problem.V - q[:, None] * problem.U
    x = np.zeros(problem.shape)
    o = solution.outcome
    ai = np.searchsorted(problem.a_grid, o.a)
    ti = np.searchsorted(problem.theta_grid, o.theta)
    x[ai, ti] = o.mass
    return float(np.max(np.abs(x * slack)))
