import numpy as np
import pytest

from prescribe_select.linprog import LinearProgram, solve_lp
from lp_brute import brute_solve


def build_lp(c, A, rels, b, lo=None, hi=None):
    n = len(c)
    lp = LinearProgram(n, objective=c)
    for row, rel, rhs in zip(A, rels, b):
        lp.add_constraint(row, rel, rhs)
    if lo is not None:
        for j in range(n):
            lp.set_bounds(j, lo[j], hi[j])
    return lp


def test_single_upper_bound():
    # min -x s.t. x <= 3, x >= 0
    lp = LinearProgram(1, objective=[-1.0])
    lp.add_constraint([1.0], "<=", 3.0)
    sol = solve_lp(lp)
    assert sol.status == "optimal"
    assert sol.x[0] == pytest.approx(3.0, abs=1e-9)
    assert sol.objective == pytest.approx(-3.0, abs=1e-9)


def test_two_variable_vertex():
    # min -3x1 - 2x2 s.t. x1 + x2 <= 4, x1 <= 2, x >= 0.
    # Expected optimum x = (2, 2), objective -10; frozen from enumerating the
    # four basic feasible vertices (0,0), (2,0), (0,4), (2,2).
    lp = LinearProgram(2, objective=[-3.0, -2.0])
    lp.add_constraint([1.0, 1.0], "<=", 4.0)
    lp.add_constraint([1.0, 0.0], "<=", 2.0)
    sol = solve_lp(lp)
    assert sol.status == "optimal"
    assert np.allclose(sol.x, [2.0, 2.0], atol=1e-8)
    assert sol.objective == pytest.approx(-10.0, abs=1e-8)


def test_contradictory_bounds_infeasible():
    lp = LinearProgram(1, objective=[1.0])
    lp.add_constraint([1.0], ">=", 1.0)
    lp.add_constraint([1.0], "<=", 0.0)
    assert solve_lp(lp).status == "infeasible"


def test_unbounded_detection():
    lp = LinearProgram(2, objective=[-1.0, 0.0])
    lp.add_constraint([0.0, 1.0], "<=", 1.0)
    assert solve_lp(lp).status == "unbounded"


def test_free_variable_and_equality():
    # min x + y s.t. x + y = 2 with x free: optimum value 2 everywhere on the line.
    lp = LinearProgram(2, objective=[1.0, 1.0])
    lp.set_bounds(0, -np.inf, np.inf)
    lp.add_constraint([1.0, 1.0], "=", 2.0)
    sol = solve_lp(lp)
    assert sol.status == "optimal"
    assert sol.objective == pytest.approx(2.0, abs=1e-8)


def test_free_variable_unbounded():
    lp = LinearProgram(1, objective=[1.0])
    lp.set_bounds(0, -np.inf, np.inf)
    lp.add_constraint([1.0], "<=", 5.0)
    assert solve_lp(lp).status == "unbounded"


def test_degenerate_problem_terminates():
    # Many redundant rows through the same vertex.
    lp = LinearProgram(2, objective=[-1.0, -1.0])
    for k in range(6):
        lp.add_constraint([1.0, 1.0], "<=", 1.0)
    lp.add_constraint([1.0, 0.0], "<=", 1.0)
    lp.add_constraint([0.0, 1.0], "<=", 1.0)
    sol = solve_lp(lp)
    assert sol.status == "optimal"
    assert sol.objective == pytest.approx(-1.0, abs=1e-8)


def _random_instance(rng, n, m):
    A = np.round(rng.uniform(-3, 3, size=(m, n)), 2)
    # Drop all-zero rows by re-rolling single entries.
    for i in range(m):
        if not A[i].any():
            A[i, rng.integers(n)] = 1.0
    rels = [rng.choice(["<=", ">=", "="]) if rng.random() < 0.15 else rng.choice(["<=", ">="]) for _ in range(m)]
    b = np.round(rng.uniform(-4, 4, size=m), 2)
    lo = np.round(rng.uniform(-3, 0, size=n), 2)
    hi = lo + np.round(rng.uniform(0.5, 5, size=n), 2)
    c = np.round(rng.uniform(-2, 2, size=n), 2)
    return c, A, rels, b, lo, hi


def test_matches_vertex_enumeration_on_random_boxed_lps():
    rng = np.random.default_rng(20240811)
    n_checked = 0
    for _ in range(60):
        n = int(rng.integers(2, 5))
        m = int(rng.integers(1, 6))
        c, A, rels, b, lo, hi = _random_instance(rng, n, m)
        status_ref, obj_ref = brute_solve(A, rels, b, lo, hi, c)
        lp = build_lp(c, A, rels, b, lo, hi)
        sol = solve_lp(lp)
        assert sol.status == status_ref
        if status_ref == "optimal":
            assert sol.objective == pytest.approx(obj_ref, abs=1e-6)
            lhs = A @ sol.x
            for i, rel in enumerate(rels):
                if rel == "<=":
                    assert lhs[i] <= b[i] + 1e-7
                elif rel == ">=":
                    assert lhs[i] >= b[i] - 1e-7
                else:
                    assert abs(lhs[i] - b[i]) <= 1e-7
            n_checked += 1
    assert n_checked >= 20  # sanity: enough feasible instances exercised


def test_objective_scaling_keeps_argmin():
    rng = np.random.default_rng(7)
    for _ in range(20):
        c, A, rels, b, lo, hi = _random_instance(rng, 3, 4)
        lp = build_lp(c, A, rels, b, lo, hi)
        sol = solve_lp(lp)
        if sol.status != "optimal":
            continue
        lp2 = build_lp(np.asarray(c) * 7.5, A, rels, b, lo, hi)
        sol2 = solve_lp(lp2)
        assert sol2.status == "optimal"
        # The scaled solve's point must be optimal under the unscaled objective.
        assert float(np.dot(c, sol2.x)) == pytest.approx(sol.objective, abs=1e-6)


def test_duplicated_constraint_row_is_harmless():
    rng = np.random.default_rng(99)
    for _ in range(20):
        c, A, rels, b, lo, hi = _random_instance(rng, 3, 3)
        lp = build_lp(c, A, rels, b, lo, hi)
        sol = solve_lp(lp)
        A2 = np.vstack([A, A[0]])
        lp2 = build_lp(c, A2, rels + [rels[0]], list(b) + [b[0]], lo, hi)
        sol2 = solve_lp(lp2)
        assert sol2.status == sol.status
        if sol.status == "optimal":
            assert sol2.objective == pytest.approx(sol.objective, abs=1e-6)


def test_duals_match_rhs_sensitivity():
    # Nondegenerate instance: perturb each rhs and compare with the dual.
    lp = LinearProgram(2, objective=[-3.0, -5.0])
    rows = [([1.0, 0.0], "<=", 4.0), ([0.0, 2.0], "<=", 12.0), ([3.0, 2.0], "<=", 18.0)]
    for row, rel, rhs in rows:
        lp.add_constraint(row, rel, rhs)
    sol = solve_lp(lp)
    assert sol.status == "optimal"
    for i in range(3):
        eps = 1e-4
        lp2 = LinearProgram(2, objective=[-3.0, -5.0])
        for k, (row, rel, rhs) in enumerate(rows):
            lp2.add_constraint(row, rel, rhs + (eps if k == i else 0.0))
        sol2 = solve_lp(lp2)
        assert (sol2.objective - sol.objective) / eps == pytest.approx(sol.duals[i], abs=1e-5)


def test_sparse_pairs_and_dump():
    lp = LinearProgram(3, objective=[1.0, 0.0, 0.0])
    lp.add_constraint([(0, 1.0), (2, -1.0)], ">=", 1.0)
    text = lp.dump()
    assert "x0" in text and ">=" in text
    sol = solve_lp(lp)
    assert sol.status == "optimal"
    assert sol.objective == pytest.approx(1.0, abs=1e-9)


def test_rejects_empty_row_and_bad_relation():
    lp = LinearProgram(2)
    with pytest.raises(ValueError):
        lp.add_constraint([0.0, 0.0], "<=", 1.0)
    with pytest.raises(ValueError):
        lp.add_constraint([1.0, 0.0], "<", 1.0)
