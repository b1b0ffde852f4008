import numpy as np
import pytest

from netmax.services.simplex import LPStatus, solve_standard_form


def test_two_variable_optimum():
    # max x1 + x2 s.t. x1 + x2 <= 4, x1 + 3 x2 <= 6
    c = np.array([-1.0, -1.0, 0.0, 0.0])
    a = np.array([[1.0, 1.0, 1.0, 0.0], [1.0, 3.0, 0.0, 1.0]])
    solution = solve_standard_form(c, a, np.array([4.0, 6.0]))
    assert solution.status is LPStatus.OPTIMAL
    assert solution.objective == pytest.approx(-4.0)
    assert a @ solution.x == pytest.approx([4.0, 6.0])


def test_equality_with_negative_rhs():
    c = np.array([1.0, 2.0])
    a = np.array([[-1.0, -1.0]])
    solution = solve_standard_form(c, a, np.array([-3.0]))
    assert solution.status is LPStatus.OPTIMAL
    assert solution.x == pytest.approx([3.0, 0.0])


def test_infeasible():
    solution = solve_standard_form(np.array([1.0, 1.0]), np.array([[1.0, 1.0]]), np.array([-1.0]))
    assert solution.status is LPStatus.INFEASIBLE
    assert solution.x is None


def test_unbounded():
    solution = solve_standard_form(np.array([-1.0, 0.0]), np.array([[1.0, -1.0]]), np.array([1.0]))
    assert solution.status is LPStatus.UNBOUNDED


def test_redundant_rows():
    c = np.array([1.0, 1.0, 0.0])
    a = np.array([[1.0, 1.0, 1.0], [2.0, 2.0, 2.0]])
    solution = solve_standard_form(c, a, np.array([1.0, 2.0]))
    assert solution.status is LPStatus.OPTIMAL
    assert solution.objective == pytest.approx(0.0)
    assert solution.x[2] == pytest.approx(1.0)


def test_iteration_cap():
    c = np.array([-1.0, -1.0, 0.0, 0.0])
    a = np.array([[1.0, 1.0, 1.0, 0.0], [1.0, 3.0, 0.0, 1.0]])
    solution = solve_standard_form(c, a, np.array([4.0, 6.0]), max_iterations=0)
    assert solution.status is LPStatus.ITERATION_LIMIT
