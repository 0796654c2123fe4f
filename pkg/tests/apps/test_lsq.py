import numpy as np
import pytest
from unittest.mock import Mock

from revert_field.apps.lsq import (
    LsqProblem,
    central_difference_jacobian,
    cost_of,
    forward_difference_jacobian,
    solve_lsq,
)


@pytest.fixture
def mock_logger():
    return Mock()


def rosenbrock(x):
    return np.array([10.0 * (x[1] - x[0] ** 2), 1.0 - x[0]])


def test_cost_of():
    assert cost_of(np.array([3.0, 4.0])) == 12.5


def test_jacobians_match_analytic():
    x = np.array([0.3, -0.7])
    analytic = np.array([[-20.0 * x[0], 10.0], [-1.0, 0.0]])
    np.testing.assert_allclose(forward_difference_jacobian(rosenbrock, x, step=1e-7, workers=1), analytic,
                               atol=1e-5)
    np.testing.assert_allclose(central_difference_jacobian(rosenbrock, x), analytic, atol=1e-8)


def test_linear_least_squares(mock_logger):
    A = np.array([[1.0, 0.0], [0.0, 2.0], [1.0, 1.0]])
    b = np.array([1.0, 2.0, 4.0])
    result = solve_lsq(LsqProblem(residuals=lambda x: A @ x - b, x0=np.zeros(2), workers=1), logger=mock_logger)
    expected = np.linalg.lstsq(A, b, rcond=None)[0]
    np.testing.assert_allclose(result.x, expected, atol=1e-5)
    assert result.converged
    assert not result.stalled
    mock_logger.info.assert_called_once()


def test_rosenbrock_converges(mock_logger):
    result = solve_lsq(LsqProblem(residuals=rosenbrock, x0=np.array([-1.2, 1.0]), workers=1), logger=mock_logger)
    np.testing.assert_allclose(result.x, [1.0, 1.0], atol=1e-4)
    assert result.cost < 1e-10
    assert result.cost <= result.initial_cost


def test_cost_never_increases(mock_logger):
    result = solve_lsq(LsqProblem(residuals=rosenbrock, x0=np.array([-1.2, 1.0]), workers=1), logger=mock_logger)
    assert np.all(np.diff(result.costs) <= 0.0)
    assert result.costs[0] == result.initial_cost
    assert result.costs[-1] == result.cost


def test_zero_residual_start(mock_logger):
    result = solve_lsq(LsqProblem(residuals=lambda x: x - 1.0, x0=np.ones(3), workers=1), logger=mock_logger)
    assert result.reason == "zero-cost"
    assert result.converged
    np.testing.assert_array_equal(result.x, np.ones(3))


def test_iteration_limit_is_reported(mock_logger):
    result = solve_lsq(LsqProblem(residuals=rosenbrock, x0=np.array([-1.2, 1.0]), max_iterations=1, workers=1),
                       logger=mock_logger)
    assert result.iterations == 1
    assert result.reason == "max-iterations"
    assert result.stalled
