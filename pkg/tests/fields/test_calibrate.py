import numpy as np
import pytest
from unittest.mock import Mock

from revert_field.core.exceptions import CalibrationError, InvalidArgumentError
from revert_field.core.models import CalibrationConfig
from revert_field.fields.calibrate import learn_sigma_n, mahalanobis_objective, spread_subset
from revert_field.fields.gp_field import PointCloud
from revert_field.fields.kernels import KernelModel, kernel_eval


@pytest.fixture
def mock_logger():
    return Mock()


@pytest.fixture
def kernel():
    return KernelModel(kind="rq", lengthscale=0.06)


@pytest.fixture
def scene():
    xs = np.arange(0.0, 1.0, 0.04)
    cloud = PointCloud(np.column_stack([xs, np.full_like(xs, 0.5)]))
    gx, gy = np.meshgrid(np.linspace(0.1, 0.9, 5), np.array([0.45, 0.52, 0.6]))
    grid = np.column_stack([gx.ravel(), gy.ravel()])
    gt = np.abs(grid[:, 1] - 0.5)
    return cloud, grid, gt


@pytest.mark.parametrize("full", [True, False])
def test_objective_is_finite_and_non_negative(scene, kernel, mock_logger, full):
    cloud, grid, gt = scene
    value = mahalanobis_objective(cloud, kernel, grid, kernel_eval(kernel, gt), 1e-2,
                                  full_covariance=full, logger=mock_logger)
    assert np.isfinite(value)
    assert value >= 0.0


def test_learn_sigma_n_stays_in_bounds(scene, kernel, mock_logger):
    cloud, grid, gt = scene
    config = CalibrationConfig(lower=1e-4, upper=1.0)
    sigma_n = learn_sigma_n(cloud, kernel, grid, gt, config, logger=mock_logger)
    assert 1e-4 <= sigma_n <= 1.0
    mock_logger.info.assert_called_once()


def test_learn_sigma_n_finds_the_minimum(scene, kernel, mock_logger, mocker):
    cloud, grid, gt = scene
    mocker.patch(
        "revert_field.fields.calibrate.mahalanobis_objective",
        side_effect=lambda cloud, kernel, grid, target, sigma_n, full, logger: (np.log10(sigma_n) + 2.0) ** 2,
    )
    sigma_n = learn_sigma_n(cloud, kernel, grid, gt, CalibrationConfig(lower=1e-6, upper=1.0), logger=mock_logger)
    assert sigma_n == pytest.approx(1e-2, rel=2e-2)


def test_non_finite_objective_at_bounds(scene, kernel, mock_logger, mocker):
    cloud, grid, gt = scene
    mocker.patch("revert_field.fields.calibrate.mahalanobis_objective", return_value=float("nan"))
    with pytest.raises(CalibrationError, match="not finite"):
        learn_sigma_n(cloud, kernel, grid, gt, logger=mock_logger)


def test_full_covariance_limit_selects_diagonal(scene, kernel, mock_logger, mocker):
    cloud, grid, gt = scene
    objective = mocker.patch("revert_field.fields.calibrate.mahalanobis_objective", return_value=1.0)
    learn_sigma_n(cloud, kernel, grid, gt, CalibrationConfig(full_covariance_limit=2), logger=mock_logger)
    assert all(call.args[5] is False for call in objective.call_args_list)


def test_argument_checks(scene, kernel):
    cloud, grid, gt = scene
    with pytest.raises(InvalidArgumentError, match="ground-truth"):
        learn_sigma_n(cloud, kernel, grid, gt[:-1])
    with pytest.raises(InvalidArgumentError, match="lower < upper"):
        learn_sigma_n(cloud, kernel, grid, gt, CalibrationConfig(lower=1.0, upper=0.1))


@pytest.fixture
def disc_grid():
    # one lengthscale apart within three lengthscales of (0.5, 0.5)
    axis = 0.5 + 0.06 * np.arange(-3, 4)
    gx, gy = np.meshgrid(axis, axis)
    return np.column_stack([gx.ravel(), gy.ravel()])


def _disc_truth(grid):
    return np.linalg.norm(grid - 0.5, axis=1)


@pytest.mark.parametrize("kind", ["se", "rq", "matern"])
def test_noiseless_observation_calibrates_to_the_lower_bound(disc_grid, mock_logger, kind):
    kernel = KernelModel(kind=kind, lengthscale=0.06)
    cloud = PointCloud(np.array([[0.5, 0.5]]))
    sigma_n = learn_sigma_n(cloud, kernel, disc_grid, _disc_truth(disc_grid), logger=mock_logger)
    assert sigma_n <= 1e-5


@pytest.mark.parametrize("kind", ["se", "rq", "matern"])
def test_sigma_n_grows_with_positional_noise(disc_grid, mock_logger, kind):
    kernel = KernelModel(kind=kind, lengthscale=0.06)
    gt = _disc_truth(disc_grid)

    def learned(spread):
        # one surface point observed twice, each copy off by spread / 2
        cloud = PointCloud(np.array([[0.5 - spread / 2, 0.5], [0.5 + spread / 2, 0.5]]))
        return learn_sigma_n(cloud, kernel, disc_grid, gt, logger=mock_logger)

    noiseless = learn_sigma_n(PointCloud(np.array([[0.5, 0.5]])), kernel, disc_grid, gt, logger=mock_logger)
    small, large = learned(0.01), learned(0.02)
    assert noiseless < 1e-5 < 1e-3 < small < large


def test_spread_subset_keeps_points_a_spacing_apart():
    axis = np.linspace(0.0, 1.0, 41)
    gx, gy = np.meshgrid(axis, axis)
    points = np.column_stack([gx.ravel(), gy.ravel()])
    keep = spread_subset(points, 0.06)
    chosen = points[keep]
    gaps = np.linalg.norm(chosen[:, None, :] - chosen[None, :, :], axis=-1)
    assert gaps[np.triu_indices(len(chosen), k=1)].min() >= 0.06 * (1 - 1e-6)
    assert keep[0] == 0
    assert 100 < len(keep) < len(points)


def test_dense_grid_is_thinned_before_the_search(kernel, mock_logger, mocker):
    xs = np.arange(0.0, 1.0, 0.04)
    cloud = PointCloud(np.column_stack([xs, np.full_like(xs, 0.5)]))
    axis = np.linspace(0.3, 0.7, 41)
    gx, gy = np.meshgrid(axis, 0.5 + np.linspace(-0.15, 0.15, 31))
    grid = np.column_stack([gx.ravel(), gy.ravel()])
    objective = mocker.patch("revert_field.fields.calibrate.mahalanobis_objective", return_value=1.0)

    learn_sigma_n(cloud, kernel, grid, np.abs(grid[:, 1] - 0.5), logger=mock_logger)

    used = objective.call_args_list[0].args[2]
    assert len(used) < len(grid)
    gaps = np.linalg.norm(used[:, None, :] - used[None, :, :], axis=-1)
    assert gaps[np.triu_indices(len(used), k=1)].min() >= kernel.lengthscale * (1 - 1e-6)
    target = objective.call_args_list[0].args[3]
    np.testing.assert_allclose(target, kernel_eval(kernel, np.abs(used[:, 1] - 0.5)))


def test_search_is_log_spaced_then_golden(scene, kernel, mock_logger, mocker):
    cloud, grid, gt = scene
    seen = []

    def objective(cloud, kernel, grid, target, sigma_n, full, logger):
        seen.append(np.log10(sigma_n))
        return (np.log10(sigma_n) + 3.3) ** 2

    mocker.patch("revert_field.fields.calibrate.mahalanobis_objective", side_effect=objective)
    config = CalibrationConfig(lower=1e-6, upper=1.0, scan_points=13)
    sigma_n = learn_sigma_n(cloud, kernel, grid, gt, config, logger=mock_logger)

    np.testing.assert_allclose(seen[:13], np.linspace(-6.0, 0.0, 13))
    assert np.log10(sigma_n) == pytest.approx(-3.3, abs=1e-3)
    assert all(-4.0 <= x <= -3.0 for x in seen[13:])
