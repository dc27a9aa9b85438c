import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import linprog

from persuasion.exceptions import Infeasible, Unbounded
from persuasion.simplex import simplex_max


def _random_lp(seed, m, n):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(m, n))
    x0 = rng.uniform(0, 1, n) * (rng.uniform(size=n) < 0.6)
    b = A @ x0
    c = rng.normal(size=n)
    A = np.vstack([A, np.ones((1, n))])
    b = np.append(b, x0.sum() + 1.0)
    A = np.hstack([A, np.eye(m + 1)[:, -1:]])
    c = np.append(c, 0.0)
    return c, A, b


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 8), st.integers(4, 25))
def test_matches_highs_on_random_bounded_lps(seed, m, n):
    c, A, b = _random_lp(seed, m, n)
    ref = linprog(-c, A_eq=A, b_eq=b, bounds=(0, None), method="highs")
    assert ref.status == 0
    res = simplex_max(c, A, b)
    assert res.objective == pytest.approx(-ref.fun, abs=1e-8 * (1 + abs(ref.fun)))
    assert np.allclose(A @ res.x, b, atol=1e-9)
    assert res.x.min() >= 0
    assert float(b @ res.y) == pytest.approx(res.objective, abs=1e-8 * (1 + abs(res.objective)))
    assert np.all(A.T @ res.y - c >= -1e-8)


def test_degenerate_transport_problem():
    # assignment polytope: every vertex is highly degenerate
    k = 6
    rng = np.random.default_rng(3)
    C = rng.integers(0, 5, size=(k, k)).astype(float)
    rows = []
    for i in range(k):
        r = np.zeros((k, k))
        r[i, :] = 1
        rows.append(r.ravel())
    for j in range(k):
        r = np.zeros((k, k))
        r[:, j] = 1
        rows.append(r.ravel())
    A = np.array(rows)
    b = np.ones(2 * k)
    res = simplex_max(C.ravel(), sp.csr_matrix(A), b)
    ref = linprog(-C.ravel(), A_eq=A, b_eq=b, bounds=(0, None), method="highs")
    assert res.objective == pytest.approx(-ref.fun, abs=1e-9)


def test_unperturbed_path_agrees():
    c, A, b = _random_lp(7, 5, 12)
    assert simplex_max(c, A, b, perturb=False).objective == pytest.approx(simplex_max(c, A, b).objective, abs=1e-9)


def test_infeasible_and_unbounded():
    with pytest.raises(Infeasible):
        simplex_max(np.array([1.0, 1.0]), np.array([[1.0, 1.0]]), np.array([-1.0]))
    with pytest.raises(Unbounded):
        simplex_max(np.array([1.0, 0.0]), np.array([[1.0, -1.0]]), np.array([0.0]))


def test_negative_rhs_rows_are_flipped():
    A = np.array([[-1.0, -1.0, 0.0], [1.0, 0.0, 1.0]])
    b = np.array([-1.0, 0.7])
    c = np.array([1.0, 2.0, 0.0])
    res = simplex_max(c, A, b)
    assert res.objective == pytest.approx(2.0, abs=1e-12)
    assert float(b @ res.y) == pytest.approx(2.0, abs=1e-12)
