import numpy as np
import pytest
from pydantic import ValidationError
from unittest.mock import Mock

from revert_field.core.exceptions import EmptyMeasurementError, InvalidArgumentError, NoEchoError
from revert_field.core.models import PlateConfig, UgwConfig
from revert_field.ugw.ugw_signal import (
    EnvelopeSignal,
    PlateScene,
    TemplateBank,
    _propagate,
    distance_step,
    envelope,
    first_echo_distance,
    grid_positions,
    image_sources,
    next_pow2,
    resolve_first_echo,
    simulate_grid_measurements,
    synthesize_measurement,
    toneburst,
    transfer,
    wavenumber,
)


@pytest.fixture
def mock_logger():
    return Mock()


@pytest.fixture
def plate():
    return PlateScene.rectangle(0.6, 0.45)


@pytest.fixture
def noiseless():
    return UgwConfig(snr_db=None)


def _peaked(values):
    return EnvelopeSignal(distances=np.arange(len(values)) * 0.1, values=np.array(values, dtype=float))


def test_plate_geometry(plate):
    assert plate.perimeter == pytest.approx(2.1)
    assert plate.diagonal == pytest.approx(0.75)
    np.testing.assert_array_equal(plate.contains([[0.3, 0.2], [0.0, 0.2], [0.7, 0.2]]), [True, False, False])
    assert plate.contains([0.0, 0.2], strict=False)[0]


def test_plate_from_config():
    assert PlateScene.from_config(PlateConfig(width=1.0, height=0.5)).perimeter == pytest.approx(3.0)
    triangle = PlateScene.from_config(PlateConfig(polygon=[(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)]))
    assert len(triangle.polygon) == 3


@pytest.mark.parametrize("polygon", [
    [(0.0, 0.0), (0.0, 1.0), (1.0, 1.0), (1.0, 0.0)],
    [(0.0, 0.0), (2.0, 0.0), (1.0, 0.5), (2.0, 2.0), (0.0, 2.0)],
    [(0.0, 0.0), (1.0, 0.0)],
])
def test_plate_rejects_bad_polygons(polygon):
    with pytest.raises(InvalidArgumentError):
        PlateScene(np.array(polygon))


def test_boundary_points_cover_the_edges(plate):
    pts = plate.boundary_points(0.02)
    for vertex in plate.polygon:
        assert np.any(np.all(np.isclose(pts, vertex), axis=1))
    closed = np.vstack([pts, pts[:1]])
    assert np.max(np.linalg.norm(np.diff(closed, axis=0), axis=1)) <= 0.02 + 1e-12


def test_image_sources(plate):
    images = image_sources(plate, [0.2, 0.1])
    np.testing.assert_allclose(images, [[0.2, -0.1], [1.0, 0.1], [0.2, 0.8], [-0.2, 0.1]], atol=1e-12)
    with pytest.raises(InvalidArgumentError, match="strictly inside"):
        image_sources(plate, [0.0, 0.1])


def test_signal_parameters(noiseless):
    assert distance_step(noiseless) == pytest.approx(3000.0 / 8e5)
    burst = toneburst(noiseless)
    assert len(burst) == 100
    assert burst[0] == 0.0
    assert next_pow2(2100) == 4096
    assert next_pow2(4096) == 4096


def test_dispersion_polynomial():
    omega = np.linspace(0.0, 1e6, 5)
    dispersive = UgwConfig(dispersion=[0.0, 1.0 / 3000.0])
    np.testing.assert_allclose(wavenumber(dispersive, omega), wavenumber(UgwConfig(), omega))
    assert transfer(UgwConfig(), 0.1, np.array([0.0]))[0] == 0.0


def test_nyquist_is_validated():
    with pytest.raises(ValidationError, match="center_freq"):
        UgwConfig(sample_rate=3e5)


def test_noiseless_measurement_is_deterministic(plate, noiseless):
    a = synthesize_measurement(plate, [0.2, 0.1], noiseless)
    b = synthesize_measurement(plate, [0.2, 0.1], noiseless)
    assert a.shape == (2000,)
    np.testing.assert_array_equal(a, b)
    noisy = synthesize_measurement(plate, [0.2, 0.1], UgwConfig(), rng=np.random.default_rng(0))
    assert not np.allclose(noisy, a)


def test_first_echo_is_the_nearest_edge(plate, noiseless, mock_logger):
    z = synthesize_measurement(plate, [0.2, 0.1], noiseless)
    e = envelope(z, noiseless, plate.diagonal, logger=mock_logger)
    assert np.all((e.values >= 0.0) & (e.values <= 1.0))
    assert e.step == pytest.approx(distance_step(noiseless))
    assert first_echo_distance(e) == pytest.approx(0.1, abs=0.01)


def test_template_bank_is_cached(noiseless):
    bank = TemplateBank.for_config(noiseless, 0.75)
    assert TemplateBank.for_config(noiseless, 0.75) is bank
    np.testing.assert_allclose(np.linalg.norm(bank.templates, axis=1), 1.0)


def test_envelope_rejects_empty_and_short_measurements(noiseless):
    with pytest.raises(EmptyMeasurementError, match="zero energy"):
        envelope(np.zeros(2000), noiseless, 0.75)
    with pytest.raises(InvalidArgumentError, match="shorter than the burst"):
        envelope(np.ones(10), noiseless, 0.75)


def test_first_echo_distance_picks_the_first_peak():
    values = np.zeros(10)
    values[[1, 2, 3]] = [0.3, 0.6, 0.3]
    values[[6, 7, 8]] = [0.45, 0.9, 0.45]
    assert first_echo_distance(_peaked(values)) == pytest.approx(0.2)


def test_first_echo_distance_refines_asymmetric_peak():
    values = np.zeros(10)
    values[[4, 5, 6]] = [0.5, 1.0, 0.7]
    assert first_echo_distance(_peaked(values)) == pytest.approx(0.5125)


def test_no_echo():
    with pytest.raises(NoEchoError, match="no-echo"):
        first_echo_distance(_peaked(np.full(10, 0.2)))


def test_envelope_interpolation():
    e = _peaked([0.0, 1.0, 0.0])
    assert e.at(0.05) == pytest.approx(0.5)
    assert e.at(5.0) == 0.0


def test_grid_positions(plate):
    positions = grid_positions(plate, 3, 4, 0.05)
    assert positions.shape == (12, 2)
    np.testing.assert_allclose(positions[0], [0.05, 0.05])
    np.testing.assert_allclose(positions[-1], [0.55, 0.40])
    with pytest.raises(InvalidArgumentError, match="margin"):
        grid_positions(plate, 3, 4, 0.3)


def test_grid_measurements_are_seeded(plate):
    cfg = UgwConfig(grid_rows=2, grid_cols=2)
    positions, a = simulate_grid_measurements(plate, cfg, seed=4)
    _, b = simulate_grid_measurements(plate, cfg, seed=4)
    _, c = simulate_grid_measurements(plate, cfg, seed=5)
    assert positions.shape == (4, 2)
    np.testing.assert_array_equal(a, b)
    assert not np.allclose(a, c)


def test_envelope_of_a_template_peaks_at_one(noiseless):
    bank = TemplateBank.for_config(noiseless, 0.75)
    e = envelope(np.array(bank.templates[40]), noiseless, 0.75, bank=bank)
    assert e.values[40] == pytest.approx(1.0, abs=1e-6)


def test_first_echo_near_the_left_edge(plate, noiseless):
    z = synthesize_measurement(plate, [0.08, 0.2], noiseless)
    e = envelope(z, noiseless, plate.diagonal)
    assert first_echo_distance(e) == pytest.approx(0.08, abs=2 * distance_step(noiseless))


def test_first_echo_distance_accepts_a_peak_at_the_first_sample():
    assert first_echo_distance(_peaked([0.9, 0.5, 0.1, 0.0, 0.0])) == 0.0


def test_doubling_the_path_divides_the_amplitude_by_sqrt_two(noiseless):
    near, far = _propagate(noiseless, np.array([0.15, 0.3]))
    assert np.max(np.abs(near)) / np.max(np.abs(far)) == pytest.approx(np.sqrt(2.0), rel=1e-3)
    assert np.argmax(np.abs(far)) - np.argmax(np.abs(near)) == 100


def test_envelope_follows_a_shifted_echo(noiseless):
    bank = TemplateBank.for_config(noiseless, 0.75)
    e = envelope(np.array(bank.templates[60]), noiseless, 0.75, bank=bank)
    shifted = envelope(np.array(bank.templates[61]), noiseless, 0.75, bank=bank)
    assert shifted.values[61] == pytest.approx(1.0, abs=1e-6)
    np.testing.assert_allclose(shifted.values[41:81], e.values[40:80], atol=5e-3)


def test_resolved_first_echo_round_trip(plate, noiseless, mock_logger):
    rng = np.random.default_rng(0)
    sources = rng.uniform([0.002, 0.002], [0.598, 0.448], size=(100, 2))
    truth = np.minimum.reduce([sources[:, 0], 0.6 - sources[:, 0], sources[:, 1], 0.45 - sources[:, 1]])
    resolved = np.array([
        resolve_first_echo(synthesize_measurement(plate, p, noiseless), noiseless, plate.diagonal, logger=mock_logger)
        for p in sources])
    assert np.count_nonzero(np.abs(resolved - truth) <= 2 * distance_step(noiseless)) >= 95


def test_resolve_separates_merged_echoes(plate, noiseless):
    z = synthesize_measurement(plate, [0.406, 0.225], noiseless)
    assert resolve_first_echo(z, noiseless, plate.diagonal) == pytest.approx(0.194, abs=distance_step(noiseless))


def test_source_next_to_an_edge_has_an_echo(plate, noiseless):
    z = synthesize_measurement(plate, [0.001, 0.2], noiseless)
    e = envelope(z, noiseless, plate.diagonal)
    assert first_echo_distance(e) <= 2 * distance_step(noiseless)
    assert resolve_first_echo(z, noiseless, plate.diagonal, e=e) == pytest.approx(0.001, abs=distance_step(noiseless))


def test_fine_template_bank(noiseless):
    fine = TemplateBank.for_config(noiseless, 0.75, refine=4)
    assert len(fine) == 4 * (len(TemplateBank.for_config(noiseless, 0.75)) - 1) + 1
    with pytest.raises(InvalidArgumentError, match="refine"):
        TemplateBank(noiseless, 0.75, refine=0)


def test_envelope_is_unchanged_by_moving_plate_and_source_together(plate, noiseless):
    moved = PlateScene(plate.polygon + np.array([1.5, -0.7]))
    e = envelope(synthesize_measurement(plate, [0.2, 0.1], noiseless), noiseless, plate.diagonal)
    e_moved = envelope(synthesize_measurement(moved, [1.7, -0.6], noiseless), noiseless, moved.diagonal)
    np.testing.assert_allclose(e_moved.values, e.values, atol=1e-9)
