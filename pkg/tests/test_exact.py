import logging

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from crnreduce.benchmarks import random_step_problem
from crnreduce.exact import BRUTE_FORCE_MAX, brute_force_oracle, greedy_incumbent, solve_step_exact
from crnreduce.relaxed import solve_step_relaxed
from crnreduce.selection import DegenerateStepError, StepProblem


def dominant_column_problem(rng, n=8):
    A = rng.normal(scale=1e-3, size=(5, n))
    A[:, 3] = rng.normal(size=5)
    b = A[:, 3].copy()
    return StepProblem(A, b, 0.05 * np.linalg.norm(b))


def test_single_dominant_column(rng):
    p = dominant_column_problem(rng)
    sol = solve_step_exact(p)
    assert sol.optimal and sol.cardinality == 1 and sol.support == (3,)
    assert brute_force_oracle(p).support == (3,)
    assert greedy_incumbent(p).support == (3,)


def test_loose_budget_selects_nothing(rng):
    A = rng.normal(size=(4, 6))
    b = rng.normal(size=4)
    p = StepProblem(A, b, np.linalg.norm(b))
    for sol in (solve_step_exact(p), brute_force_oracle(p)):
        assert sol.cardinality == 0 and sol.support == () and sol.optimal
    assert greedy_incumbent(p).cardinality == 0


def test_single_reaction_tie_prefers_empty():
    p = StepProblem(np.array([[1.0]]), np.array([0.5]), 0.5)
    assert brute_force_oracle(p).support == ()
    assert solve_step_exact(p).support == ()


def test_infeasible_instance():
    A = np.array([[1.0, 0.0], [0.0, 1.0]])
    p = StepProblem(A, np.array([5.0, 5.0]), 0.1)
    assert brute_force_oracle(p).status == "infeasible"
    sol = solve_step_exact(p)
    assert sol.status == "infeasible" and sol.w is None
    assert greedy_incumbent(p) is None


def test_brute_force_size_limit():
    n = BRUTE_FORCE_MAX + 1
    with pytest.raises(ValueError):
        brute_force_oracle(StepProblem(np.ones((1, n)), np.ones(1), 1.0))


def test_degenerate_rejected():
    p = StepProblem(np.zeros((1, 2)), np.ones(1), 0.0, degenerate=True)
    with pytest.raises(DegenerateStepError):
        solve_step_exact(p)
    with pytest.raises(DegenerateStepError):
        brute_force_oracle(p)
    with pytest.raises(ValueError):
        solve_step_exact(StepProblem(np.ones((1, 1)), np.ones(1), 0.1), node_limit=0)


def test_zero_columns_never_selected(rng):
    A = rng.normal(size=(4, 8))
    A[:, [0, 2]] = 0.0
    p = StepProblem(A, A.sum(axis=1), 1e-6)
    sol = solve_step_exact(p)
    assert sol.optimal and not {0, 2} & set(sol.support)


def test_random_six_by_ten_matches_oracle(rng):
    for _ in range(30):
        A = rng.normal(size=(6, 10)) * 10.0 ** rng.uniform(-2, 0, size=10)
        b = A @ (rng.random(10) < 0.6) + rng.normal(scale=0.02, size=6)
        p = StepProblem(A, b, 0.3 * np.linalg.norm(b))
        ex, bf = solve_step_exact(p), brute_force_oracle(p)
        assert (ex.status, ex.cardinality, ex.support) == (bf.status, bf.cardinality, bf.support)


def test_node_limit_reports_incumbent_and_gap():
    rng = np.random.default_rng(3)
    # many near-identical small columns make the tree wide
    A = 1.0 + 1e-3 * rng.random((3, 16))
    b = A[:, :8].sum(axis=1)
    p = StepProblem(A, b, 0.3)
    sol = solve_step_exact(p, node_limit=3)
    assert sol.status == "node_limit"
    assert sol.w is not None and p.is_feasible(sol.w)
    assert sol.gap >= 0
    full = solve_step_exact(p)
    assert full.optimal and full.cardinality <= sol.cardinality


def test_verbose_logs_nodes(caplog, rng):
    A = rng.normal(size=(3, 6))
    p = StepProblem(A, A @ np.array([1, 0, 1, 1, 0, 1.0]), 0.1)
    with caplog.at_level(logging.INFO, logger="crnreduce.exact"):
        solve_step_exact(p, verbose=True)
    assert any("node" in r.message for r in caplog.records)


@given(st.integers(0, 2**32 - 1))
def test_oracle_equivalence_property(seed):
    p = random_step_problem(np.random.default_rng(seed))
    ex, bf = solve_step_exact(p), brute_force_oracle(p)
    assert ex.status == bf.status
    if bf.status == "optimal":
        assert ex.cardinality == bf.cardinality == ex.w.cardinality
        assert ex.support == bf.support
        assert p.is_feasible(ex.w) and ex.gap == 0
        g = greedy_incumbent(p)
        if g is not None:
            assert g.cardinality >= ex.cardinality
        rel = solve_step_relaxed(p)
        assert rel.objective <= ex.cardinality + 1e-6


@given(st.integers(0, 2**32 - 1), st.floats(1.0, 4.0))
def test_budget_monotonicity(seed, factor):
    p = random_step_problem(np.random.default_rng(seed))
    q = StepProblem(p.A, p.b, p.tau * factor)
    a, b = solve_step_exact(p), solve_step_exact(q)
    if a.status == "optimal":
        assert b.status == "optimal" and b.cardinality <= a.cardinality
