"""Two-phase revised simplex for ``max c'x  s.t.  Ax = b, x >= 0``.

The basis inverse is a dense Fortran-ordered matrix updated in place by a
rank-one BLAS call, with a fresh LU refactorisation every ``REFACTOR``
pivots and again before the optimum is reported.  The constraint matrix may
be any scipy sparse matrix; it is held in CSC form.

Pricing is Dantzig's most-negative reduced cost.  Whenever a pivot is
degenerate the next choice uses Bland's smallest-index rule, and the solver
stays there until the objective moves again.  A cycle consists of
degenerate pivots only, all but one taken under Bland's rule, so the method
terminates.

Persuasion LPs are massively degenerate (every unused action contributes a
zero-level basic variable), so by default the right-hand side is shifted by
a tiny random amount before solving.  The true right-hand side is restored
afterwards and a short dual simplex pass (also under Bland's rule) repairs
any primal infeasibility this leaves behind.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy import linalg
from scipy.linalg.blas import dger

from .exceptions import Infeasible, IterationLimit, Unbounded

REFACTOR = 64
PIVOT_TOL = 1e-9
# among tied rows, pivots this much smaller than the largest are skipped
TIE_PIVOT = 1e-3
DEGENERATE = 1e-12
PERTURBATION = 1e-7
RETRIES = 3


class SingularBasis(IterationLimit):
    """Rounding drove the basis matrix to exact singularity."""


@dataclass
class SimplexResult:
    x: np.ndarray
    y: np.ndarray
    objective: float
    basis: np.ndarray
    iterations: int
    status: str = "optimal"


class _State:
    def __init__(self, A: sp.csc_matrix, b, tol):
        self.A = A
        self.AT = A.T.tocsr()
        self.indptr, self.indices, self.data = A.indptr, A.indices, A.data
        self.m, self.n = A.shape
        self.b = b
        self.tol = tol
        self.basis = np.arange(self.n, self.n + self.m)
        self.is_basic = np.zeros(self.n + self.m, dtype=bool)
        self.is_basic[self.basis] = True
        self.Binv = np.asfortranarray(np.eye(self.m))
        self.xB = b.copy()
        self.iterations = 0
        self.lu = None

    def column(self, j):
        if j >= self.n:
            return self.Binv[:, j - self.n].copy()
        s, e = self.indptr[j], self.indptr[j + 1]
        return self.Binv[:, self.indices[s:e]] @ self.data[s:e]

    def row(self, r):
        """Row r of B^-1 [A I]."""
        br = self.Binv[r]
        return np.concatenate([self.AT @ br, br])

    def refactor(self):
        B = np.zeros((self.m, self.m))
        real = self.basis < self.n
        if real.any():
            B[:, real] = self.A[:, self.basis[real]].toarray()
        art = np.nonzero(~real)[0]
        B[self.basis[art] - self.n, art] = 1.0
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", linalg.LinAlgWarning)
            self.lu = linalg.lu_factor(B)
        if not np.all(np.abs(np.diag(self.lu[0])) > 0):
            raise SingularBasis("basis matrix became singular", iterations=self.iterations)
        self.Binv = np.asfortranarray(linalg.lu_solve(self.lu, np.eye(self.m)))
        self.xB = linalg.lu_solve(self.lu, self.b)

    def duals(self, cost):
        return linalg.lu_solve(self.lu, cost[self.basis], trans=1) if self.lu is not None else cost[self.basis] @ self.Binv

    def reduced(self, cost, y):
        d = np.empty(self.n + self.m)
        d[: self.n] = cost[: self.n] - self.AT @ y
        d[self.n :] = cost[self.n :] - y
        return d

    def pivot(self, r, j, alpha):
        step = self.xB[r] / alpha[r]
        self.xB -= step * alpha
        self.xB[r] = step
        prow = self.Binv[r] / alpha[r]
        a = alpha.copy()
        a[r] = 0.0
        self.Binv = dger(-1.0, a, prow, a=self.Binv, overwrite_a=True)
        self.Binv[r] = prow
        self.is_basic[self.basis[r]] = False
        self.is_basic[j] = True
        self.basis[r] = j
        self.iterations += 1
        return step


def _primal(st: _State, cost, allowed, max_iter, pin_artificials):
    """Primal pivots until no allowed column prices out."""
    bland = False
    since = REFACTOR
    scale = 1.0 + float(np.max(np.abs(cost)))
    y = None
    while True:
        if since >= REFACTOR:
            st.refactor()
            y = st.duals(cost)
            since = 0
        d = st.reduced(cost, y)
        neg = (d < -st.tol * scale) & allowed & ~st.is_basic
        if not neg.any():
            return
        if st.iterations >= max_iter:
            raise IterationLimit("simplex iteration limit reached", iterations=st.iterations)
        if bland:
            j = int(np.argmax(neg))
        else:
            j = int(np.argmin(np.where(neg, d, np.inf)))
        alpha = st.column(j)
        art = (st.basis >= st.n) if pin_artificials else np.zeros(st.m, bool)
        ptol = PIVOT_TOL * max(1.0, float(np.max(np.abs(alpha))))
        cand = (alpha > ptol) | (art & (np.abs(alpha) > ptol))
        if not cand.any():
            raise Unbounded("objective unbounded along an improving ray", column=j)
        ratios = np.full(st.m, np.inf)
        pos = cand & ~art
        ratios[pos] = np.maximum(st.xB[pos], 0.0) / alpha[pos]
        ratios[cand & art] = 0.0
        best = ratios.min()
        ties = np.nonzero(ratios <= best + DEGENERATE * (1 + best))[0]
        big = np.abs(alpha[ties])
        ties = ties[big >= TIE_PIVOT * big.max()]
        if bland:
            r = int(ties[np.argmin(st.basis[ties])])
        else:
            r = int(ties[np.argmax(np.abs(alpha[ties]))])
        y = y + (d[j] / alpha[r]) * st.Binv[r]
        st.pivot(r, j, alpha)
        since += 1
        bland = best <= DEGENERATE


def _dual_cleanup(st: _State, cost, allowed, max_iter):
    """Dual simplex with Bland's rule from a dual feasible basis."""
    feas = st.tol * (1.0 + float(np.max(np.abs(st.b))))
    while True:
        st.refactor()
        bad = np.nonzero(st.xB < -feas)[0]
        if bad.size == 0:
            return
        if st.iterations >= max_iter:
            raise IterationLimit("simplex iteration limit reached", iterations=st.iterations)
        r = int(bad[np.argmin(st.basis[bad])])
        d = np.maximum(st.reduced(cost, st.duals(cost)), 0.0)
        rho = st.row(r)
        cand = np.nonzero((rho < -PIVOT_TOL) & allowed & ~st.is_basic)[0]
        if cand.size == 0:
            raise Infeasible("primal infeasible: dual ray found during cleanup", row=r)
        ratios = d[cand] / -rho[cand]
        best = ratios.min()
        ties = cand[ratios <= best + DEGENERATE * (1 + best)]
        j = int(ties.min())
        st.pivot(r, j, st.column(j))


def simplex_max(
    c, A, b, tol: float = 1e-9, max_iter: int | None = None, perturb: bool = True, seed: int = 0
) -> SimplexResult:
    """Solve ``max c'x, Ax = b, x >= 0``; return primal, basis duals and basis.

    Raises :class:`Infeasible`, :class:`Unbounded` or :class:`IterationLimit`.
    """
    A = sp.csc_matrix(A, dtype=float)
    A.sort_indices()
    b = np.asarray(b, dtype=float).copy()
    c = np.asarray(c, dtype=float)
    m, n = A.shape
    flip = b < 0
    if flip.any():
        A = sp.csc_matrix(sp.diags(np.where(flip, -1.0, 1.0)) @ A)
        b = np.abs(b)
    if max_iter is None:
        max_iter = 50 * (m + n)
    if perturb:
        for k in range(RETRIES):
            try:
                return _solve(c, A, b, tol, max_iter, _shift(A, b, seed + k), flip)
            except (Infeasible, Unbounded):
                break
            except SingularBasis:
                continue
    return _solve(c, A, b, tol, max_iter, None, flip)


def _shift(A: sp.csc_matrix, b, seed):
    """Random right-hand side shift whose sign each row can absorb."""
    rng = np.random.default_rng(seed)
    R = A.tocsr()
    rmax = np.maximum.reduceat(R.data, R.indptr[:-1]) if R.nnz else np.zeros(A.shape[0])
    rmin = np.minimum.reduceat(R.data, R.indptr[:-1]) if R.nnz else np.zeros(A.shape[0])
    empty = np.diff(R.indptr) == 0
    sign = np.where(rmax > 0, 1.0, -1.0)
    sign = np.where((rmax > 0) & (rmin < 0), rng.choice([-1.0, 1.0], size=b.size), sign)
    eps = PERTURBATION * (1.0 + np.abs(b)) * rng.uniform(0.5, 1.0, size=b.size) * sign
    return np.where(empty, 0.0, eps)


def _solve(c, A, b, tol, max_iter, shift, flip):
    m, n = A.shape
    st = _State(A, b if shift is None else b + shift, tol)
    real = np.concatenate([np.ones(n, bool), np.zeros(m, bool)])

    cost1 = np.concatenate([np.zeros(n), np.ones(m)])
    _primal(st, cost1, real, max_iter, pin_artificials=False)
    st.refactor()
    infeas = float(np.sum(st.xB[st.basis >= n]))
    if infeas > tol * (1.0 + float(np.max(st.b, initial=0.0))) * 10:
        raise Infeasible("no feasible point: phase 1 optimum is positive", residual=infeas)

    for r in np.nonzero(st.basis >= n)[0]:
        rho = st.row(r)[:n]
        rho[st.basis[st.basis < n]] = 0.0
        cand = np.nonzero(np.abs(rho) > 1e-9)[0]
        if cand.size:
            j = int(cand[np.argmax(np.abs(rho[cand]))])
            st.pivot(r, j, st.column(j))

    cost2 = np.concatenate([-c, np.zeros(m)])
    _primal(st, cost2, real, max_iter, pin_artificials=True)
    if shift is not None:
        st.b = b
    st.refactor()
    if shift is not None or np.any(st.xB < -tol * (1.0 + float(np.max(b)))):
        # small pivots skipped by the ratio test can also leave basics slightly negative
        _dual_cleanup(st, cost2, real, max_iter)
        _primal(st, cost2, real, max_iter, pin_artificials=True)
    st.refactor()
    if np.any(st.xB < -10 * tol * (1.0 + float(np.max(b)))):
        raise Infeasible("basic solution infeasible after cleanup", min_x=float(st.xB.min()))
    xB = np.where(st.xB < 0, 0.0, st.xB)
    y = -st.duals(cost2)
    x = np.zeros(n)
    real_b = st.basis < n
    x[st.basis[real_b]] = xB[real_b]
    if flip.any():
        y = np.where(flip, -y, y)
    return SimplexResult(x=x, y=y, objective=float(c @ x), basis=st.basis.copy(), iterations=st.iterations)
