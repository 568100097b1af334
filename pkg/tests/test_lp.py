import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kktgp.lp import (INFEASIBLE, OPTIMAL, UNBOUNDED, LinearProgram, primal_residual,
                      solve_l1_max_milp, solve_l1_min, solve_lp)


def brute_force_vertices(c, A, b):
    """min c'x over {A x <= b} by enumerating every basic solution (independent oracle)."""
    n = A.shape[1]
    best = np.inf
    for rows in itertools.combinations(range(A.shape[0]), n):
        sub = A[list(rows)]
        if abs(np.linalg.det(sub)) < 1e-10:
            continue
        x = np.linalg.solve(sub, b[list(rows)])
        if np.all(A @ x <= b + 1e-9):
            best = min(best, c @ x)
    return best


def test_min_x_with_lower_bound():
    sol = solve_lp(LinearProgram([1.0], bounds=[(3, None)]))
    assert sol.status == OPTIMAL
    assert sol.x[0] == pytest.approx(3.0)
    assert sol.objective_value == pytest.approx(3.0)


def test_contradictory_bounds_are_infeasible():
    sol = solve_lp(LinearProgram([-1.0], A_ub=[[1.0]], b_ub=[0.0], bounds=[(1, None)]))
    assert sol.status == INFEASIBLE


def test_unbounded_is_reported():
    sol = solve_lp(LinearProgram([-1.0, 0.0], A_ub=[[1.0, -1.0]], b_ub=[1.0]))
    assert sol.status == UNBOUNDED


def test_rejects_nonfinite_data():
    with pytest.raises(ValueError):
        LinearProgram([np.nan])
    with pytest.raises(ValueError):
        LinearProgram([1.0, 2.0], A_eq=[[1.0]], b_eq=[1.0])


@pytest.mark.parametrize("seed", range(5))
def test_random_bounded_ten_variable_lp_is_primal_feasible(seed):
    rng = np.random.default_rng(seed)
    n = 10
    # random constraints plus a box keep the feasible set bounded and nonempty
    A = np.vstack([rng.normal(size=(4, n)), np.eye(n), -np.eye(n)])
    b = np.concatenate([np.abs(rng.normal(size=4)) + 0.5, np.ones(n), np.ones(n)])
    c = rng.normal(size=n)
    sol = solve_lp(LinearProgram(c, A_ub=A, b_ub=b, bounds=[(None, None)] * n))
    assert sol.optimal
    assert primal_residual(LinearProgram(c, A_ub=A, b_ub=b, bounds=[(None, None)] * n), sol.x) <= 1e-7


@pytest.mark.parametrize("seed", range(6))
def test_small_lp_matches_vertex_enumeration(seed):
    rng = np.random.default_rng(100 + seed)
    n = 4
    A = np.vstack([rng.normal(size=(5, n)), np.eye(n), -np.eye(n)])
    b = np.concatenate([np.abs(rng.normal(size=5)) + 0.2, 2 * np.ones(n), 2 * np.ones(n)])
    c = rng.normal(size=n)
    sol = solve_lp(LinearProgram(c, A_ub=A, b_ub=b, bounds=[(None, None)] * n))
    assert sol.optimal
    assert sol.objective_value == pytest.approx(brute_force_vertices(c, A, b), abs=1e-8)


def test_ten_variable_lp_matches_vertex_enumeration():
    # 10 variables with 12 constraint rows keeps enumeration at C(12, 10) = 66 bases
    rng = np.random.default_rng(7)
    n = 10
    A = np.vstack([rng.normal(size=(2, n)), np.eye(n)])
    A = np.vstack([A, -np.ones((1, n))])
    b = np.concatenate([np.abs(rng.normal(size=2)) + 0.5, np.ones(n), [5.0]])
    c = rng.normal(size=n)
    sol = solve_lp(LinearProgram(c, A_ub=A, b_ub=b, bounds=[(None, None)] * n))
    oracle = brute_force_vertices(c, A, b)
    assert np.isfinite(oracle)
    assert sol.objective_value == pytest.approx(oracle, abs=1e-8)


@pytest.mark.parametrize("seed", range(5))
def test_duality_gap_on_random_feasible_instances(seed):
    rng = np.random.default_rng(seed)
    n, m_ub, m_eq = 6, 4, 2
    x0 = rng.random(n)  # feasible by construction (x0 >= 0)
    A_ub = rng.normal(size=(m_ub, n))
    b_ub = A_ub @ x0 + rng.random(m_ub)
    A_eq = rng.normal(size=(m_eq, n))
    b_eq = A_eq @ x0
    c = rng.random(n) + 0.1  # positive costs with x >= 0 keep it bounded
    sol = solve_lp(LinearProgram(c, A_ub, b_ub, A_eq, b_eq))
    assert sol.optimal
    y_ub, y_eq = sol.duals_ub, sol.duals_eq
    assert np.all(y_ub <= 1e-9)  # marginals of <= rows in a minimization
    reduced = c - A_ub.T @ y_ub - A_eq.T @ y_eq
    assert np.all(reduced >= -1e-7)  # dual feasibility for x >= 0
    dual_obj = b_ub @ y_ub + b_eq @ y_eq
    assert abs(sol.objective_value - dual_obj) <= 1e-7


def test_order_only_changes_the_vertex_not_the_value():
    # a whole edge is optimal: min x1 + x2 on x1 + x2 >= 1
    lp = LinearProgram([1.0, 1.0], A_ub=[[-1.0, -1.0]], b_ub=[-1.0])
    a = solve_lp(lp, order=[0, 1])
    b = solve_lp(lp, order=[1, 0])
    assert a.objective_value == pytest.approx(1.0) and b.objective_value == pytest.approx(1.0)
    again = solve_lp(lp, order=[0, 1])
    np.testing.assert_array_equal(a.x, again.x)


# l1 minimization -----------------------------------------------------------


def test_l1_min_single_absolute_value():
    sol = solve_l1_min([[1.0]], [-2.0])
    assert sol.objective_value == pytest.approx(0.0, abs=1e-12)
    assert sol.x[0] == pytest.approx(2.0)


def test_l1_min_flat_valley_is_deterministic():
    sol = solve_l1_min([[1.0], [1.0]], [0.0, -1.0])
    assert sol.objective_value == pytest.approx(1.0)
    assert -1e-12 <= sol.x[0] <= 1 + 1e-12
    again = solve_l1_min([[1.0], [1.0]], [0.0, -1.0])
    assert again.x[0] == sol.x[0]


def test_l1_min_zero_offset():
    sol = solve_l1_min(np.eye(3), np.zeros(3))
    assert sol.objective_value == pytest.approx(0.0, abs=1e-12)
    np.testing.assert_allclose(sol.x, 0.0, atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_l1_min_invariant_to_row_permutation(seed):
    rng = np.random.default_rng(seed)
    M = rng.normal(size=(5, 3))
    d = rng.normal(size=5)
    perm = rng.permutation(5)
    a = solve_l1_min(M, d)
    b = solve_l1_min(M[perm], d[perm])
    assert a.objective_value == pytest.approx(b.objective_value, abs=1e-8)


def test_l1_min_matches_dense_search_in_one_dimension():
    rng = np.random.default_rng(3)
    M = rng.normal(size=(6, 1))
    d = rng.normal(size=6)
    grid = np.linspace(-10, 10, 200001)
    oracle = np.min(np.abs(M[:, 0][None] * grid[:, None] + d).sum(axis=1))
    assert solve_l1_min(M, d).objective_value == pytest.approx(oracle, abs=1e-3)


# sign-enumeration MILP -------------------------------------------------------


def test_milp_abs_on_interval():
    sol = solve_l1_max_milp([[1.0]], [0.0], bounds=[(-1, 1)])
    assert sol.objective_value == pytest.approx(1.0)


def test_milp_on_unit_box():
    sol = solve_l1_max_milp(np.eye(2), np.zeros(2), bounds=[(-1, 1), (-1, 1)])
    assert sol.objective_value == pytest.approx(2.0)
    assert sol.extra["n_lp"] == 4


def test_milp_unbounded_is_flagged():
    sol = solve_l1_max_milp([[1.0]], [0.0])
    assert sol.status == UNBOUNDED
    assert "normalization" in sol.message


def test_milp_rejects_too_many_binaries():
    with pytest.raises(ValueError):
        solve_l1_max_milp(np.eye(21), np.zeros(21), bounds=[(-1, 1)] * 21)


@pytest.mark.parametrize("seed", range(3))
def test_milp_matches_grid_search_on_random_polytope(seed):
    rng = np.random.default_rng(seed)
    # polytope: random halfspaces intersected with [-1, 1]^2
    A = rng.normal(size=(4, 2))
    b = np.abs(rng.normal(size=4)) + 0.3
    M = rng.normal(size=(2, 2))
    d = rng.normal(size=2) * 0.3
    sol = solve_l1_max_milp(M, d, A_ub=A, b_ub=b, bounds=[(-1, 1), (-1, 1)])

    def grid_max(lo, hi, n):
        gx, gy = np.linspace(lo[0], hi[0], n), np.linspace(lo[1], hi[1], n)
        X, Y = np.meshgrid(gx, gy)
        P = np.column_stack([X.ravel(), Y.ravel()])
        P = P[np.all(P @ A.T <= b, axis=1) & np.all(np.abs(P) <= 1, axis=1)]
        v = np.abs(P @ M.T + d).sum(axis=1)
        return v, P

    # coarse grid, then a fine grid around the best coarse cells
    v, P = grid_max((-1, -1), (1, 1), 1001)
    oracle = v.max()
    for p in P[np.argsort(v)[-5:]]:
        vf, _ = grid_max(p - 0.004, p + 0.004, 801)
        oracle = max(oracle, vf.max())
    assert sol.objective_value == pytest.approx(oracle, abs=1e-3)
    assert sol.objective_value >= oracle - 1e-9


def test_milp_with_no_rows_is_zero():
    sol = solve_l1_max_milp(np.zeros((0, 2)), np.zeros(0), bounds=[(-1, 1)] * 2)
    assert sol.objective_value == 0.0
