import numpy as np
import pytest
from unittest.mock import Mock

from revert_field.apps.mapping import (
    MapState,
    chain_residuals,
    das_map,
    default_virtual_count,
    field_distances,
    field_rmse,
    first_echoes,
    init_virtual_points,
    latent_grid,
    plate_grid,
    run_mapping,
    solve_stage1,
)
from revert_field.core.exceptions import InvalidArgumentError, NoEchoError
from revert_field.core.models import MapConfig, RunConfig, UgwConfig
from revert_field.fields.kernels import KernelModel
from revert_field.ugw.ugw_signal import EnvelopeSignal, PlateScene, grid_envelopes, simulate_grid_measurements


@pytest.fixture
def mock_logger():
    return Mock()


@pytest.fixture
def echo_at_tenth():
    distances = np.linspace(0.0, 1.0, 101)
    return EnvelopeSignal(distances=distances, values=np.exp(-((distances - 0.1) / 0.01) ** 2))


@pytest.fixture
def ring_state():
    angles = 2 * np.pi * np.arange(8) / 8
    points = 0.25 * np.column_stack([np.cos(angles), np.sin(angles)])
    return MapState(virtual_points=points, reg_alpha=1e-3, kernel=KernelModel(kind="rq", lengthscale=0.13),
                    sigma_n=1e-3)


def _small_run(**mapping):
    options = dict(q=8, max_iterations=2, field_grid=20)
    options.update(mapping)
    return RunConfig(seed=1, ugw=UgwConfig(grid_rows=3, grid_cols=3, snr_db=None), mapping=MapConfig(**options))


@pytest.fixture
def small_archive():
    config = _small_run()
    positions, measurements = simulate_grid_measurements(PlateScene.rectangle(0.6, 0.45), config.ugw, config.seed)
    return positions, measurements


def test_default_virtual_count():
    assert default_virtual_count(2.1, 0.13) == 25
    assert default_virtual_count(0.01, 1.0) == 2


def test_init_virtual_points():
    points = init_virtual_points([[0.0, 0.0], [2.0, 0.0]], [0.1, 0.3], q=4, margin=0.05)
    assert points.shape == (4, 2)
    np.testing.assert_allclose(np.linalg.norm(points - [1.0, 0.0], axis=1), 0.25)
    with pytest.raises(InvalidArgumentError, match="at least 2"):
        init_virtual_points([[0.0, 0.0]], [0.1], q=1)


def test_chain_residuals():
    np.testing.assert_allclose(chain_residuals(np.array([[0.0, 0.0], [3.0, 4.0], [3.0, 4.0]]), 4.0), [10.0, 0.0])


def test_field_distances_and_fallback():
    state = MapState(virtual_points=np.array([[0.0, 0.0], [1.0, 0.0]]), reg_alpha=0.0,
                     kernel=KernelModel(kind="se", lengthscale=0.1), sigma_n=1e-3)
    d, fallbacks = field_distances(state, np.array([[0.0, 0.0], [10.0, 0.0]]))
    assert d[0] == pytest.approx(0.0, abs=1e-3)
    assert d[1] == pytest.approx(9.0)
    assert fallbacks == 1


def test_stage1_never_increases_cost(ring_state, mock_logger):
    sensors = np.array([[0.0, 0.0], [0.05, 0.0], [0.0, 0.05]])
    state, report, result = solve_stage1(sensors, [0.2, 0.15, 0.15], ring_state, MapConfig(max_iterations=3),
                                         logger=mock_logger)
    assert report.stage == "stage1"
    assert report.final_cost <= report.initial_cost
    assert state.virtual_points.shape == (8, 2)
    assert result.x.shape == (16,)


def test_das_map_peaks_at_the_echo_distance(echo_at_tenth):
    values = das_map(np.array([[0.0, 0.0]]), [echo_at_tenth], np.array([[0.1, 0.0], [0.3, 0.0], [5.0, 0.0]]))
    assert values[0] == pytest.approx(1.0)
    assert values[1] == pytest.approx(0.0, abs=1e-6)
    assert values[2] == 0.0


def test_plate_grid_and_latent_grid(ring_state):
    grid = plate_grid(PlateScene.rectangle(0.6, 0.45), 5)
    assert grid.shape == (25, 2)
    result = latent_grid(ring_state, grid - [0.3, 0.225])
    assert len(result) == 25


def test_first_echoes_skips_silent_measurements(echo_at_tenth, mock_logger):
    silent = EnvelopeSignal(distances=echo_at_tenth.distances, values=np.zeros(101))
    keep, distances = first_echoes([silent, echo_at_tenth], 0.4, 0.1, logger=mock_logger)
    np.testing.assert_array_equal(keep, [1])
    assert distances[0] == pytest.approx(0.1, abs=1e-3)
    mock_logger.info.assert_called_once()


def test_run_mapping_two_stage(small_archive, mock_logger):
    positions, measurements = small_archive
    state, report = run_mapping(_small_run(), positions, measurements, logger=mock_logger)
    assert [s.stage for s in report.stages] == ["stage1", "stage2"]
    assert all(s.final_cost <= s.initial_cost for s in report.stages)
    assert len(report.virtual_points) == 8
    assert report.kernel == "rq"
    assert report.interior_rmse is not None and np.isfinite(report.interior_rmse)


def test_run_mapping_envelope_only_with_loggpis(small_archive, mock_logger):
    positions, measurements = small_archive
    config = _small_run(mode="envelope-only", distance_method="loggpis", max_iterations=1)
    state, report = run_mapping(config, positions, measurements, logger=mock_logger)
    assert [s.stage for s in report.stages] == ["stage2"]
    assert report.kernel == "matern"
    assert state.distance_method == "loggpis"


def test_run_mapping_without_echoes(small_archive, mock_logger, mocker):
    positions, measurements = small_archive
    mocker.patch("revert_field.apps.mapping.resolve_first_echo", side_effect=NoEchoError(0.4, 0.1))
    with pytest.raises(NoEchoError):
        run_mapping(_small_run(), positions, measurements, logger=mock_logger)


def test_two_stage_map_improves_on_its_starting_circle(mock_logger):
    config = RunConfig(seed=1, ugw=UgwConfig(grid_rows=4, grid_cols=4, snr_db=None),
                       mapping=MapConfig(q=12, max_iterations=40, field_grid=20))
    scene = PlateScene.rectangle(0.6, 0.45)
    positions, measurements = simulate_grid_measurements(scene, config.ugw, config.seed)
    state, report = run_mapping(config, positions, measurements, logger=mock_logger)

    envelopes = grid_envelopes(measurements, config.ugw, scene.diagonal)
    keep, echoes = first_echoes(envelopes, 0.4, 0.1, measurements=measurements, ugw=config.ugw)
    start = state.with_points(init_virtual_points(positions[keep], echoes, 12, config.mapping.init_margin))
    assert report.interior_rmse < field_rmse(start, scene, 20)
