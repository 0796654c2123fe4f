"""
Mapping a plate boundary from guided-wave measurements taken at known positions.

The map is a set of virtual surface observations X defining a latent GP
field. Stage 1 fits the field distance at each sensor to its first-echo
distance; stage 2 starts from there and maximizes the envelope values at the
field distances. Both stages add a chain regularizer alpha * sum ||x_i - x_(i-1)||^2
and are solved by Levenberg-Marquardt, rebuilding the GP at every evaluation.
"""

import logging
import math
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.interpolate import PchipInterpolator

from ..core.exceptions import InvalidArgumentError, NoEchoError
from ..core.models import MapConfig, MapReport, MapStageReport, RunConfig, UgwConfig
from ..fields.base_field import FieldQuery
from ..fields.baselines import rect_distance
from ..fields.distance import query_batch, query_fused
from ..fields.gp_field import PointCloud, build_model, infer_batch
from ..fields.kernels import SQRT3, KernelKind, KernelModel, reverting
from ..ugw.ugw_signal import EnvelopeSignal, PlateScene, first_echo_distance, grid_envelopes, resolve_first_echo
from ..utils.parallel import ordered_map
from .lsq import LsqProblem, LsqResult, solve_lsq

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class MapState:
    virtual_points: np.ndarray  # (Q, 2), chain order
    reg_alpha: float
    kernel: KernelModel
    sigma_n: float
    distance_method: str = "ours"

    def model(self):
        return build_model(PointCloud(self.virtual_points), self.kernel, self.sigma_n)

    def with_points(self, points: np.ndarray) -> "MapState":
        return replace(self, virtual_points=np.asarray(points, dtype=float).reshape(-1, 2))


def default_virtual_count(perimeter: float, lengthscale: float) -> int:
    """One virtual observation per l / 1.5 of boundary."""
    return max(2, math.ceil(1.5 * perimeter / lengthscale))


def init_virtual_points(sensor_positions, first_echo_distances, q: int, margin: float = 0.05) -> np.ndarray:
    """Q points on a circle of radius median(d) + margin around the sensor centroid, in angular order."""
    if q < 2:
        raise InvalidArgumentError(f"need at least 2 virtual points, got {q}")
    sensors = np.asarray(sensor_positions, dtype=float)
    radius = float(np.median(first_echo_distances)) + margin
    angles = 2 * np.pi * np.arange(q) / q
    return sensors.mean(axis=0) + radius * np.column_stack([np.cos(angles), np.sin(angles)])


def chain_residuals(points: np.ndarray, reg_alpha: float) -> np.ndarray:
    """sqrt(alpha) ||x_i - x_(i-1)||, Q - 1 terms."""
    return np.sqrt(reg_alpha) * np.linalg.norm(np.diff(points, axis=0), axis=1)


def field_distances(state: MapState, sensors: np.ndarray) -> Tuple[np.ndarray, int]:
    """
    Field distance at each sensor for the current virtual points and the
    number of sensors where the latent field was not positive and the fused
    field stood in.
    """
    model = state.model()
    o_hat = infer_batch(model, sensors, gradient=False).o_hat
    d = np.zeros(len(sensors))
    ok = (o_hat > 0) & (o_hat <= 1)
    if np.any(ok):
        if state.distance_method == "loggpis":
            d[ok] = -(state.kernel.lengthscale / SQRT3) * np.log(o_hat[ok])
        else:
            d[ok] = reverting(state.kernel, o_hat[ok])
    bad = o_hat <= 0
    if np.any(bad):
        d[bad] = query_fused(model, model.cloud, sensors[bad]).d_hat
    return d, int(np.count_nonzero(bad))


def envelope_interpolants(envelopes: Sequence[EnvelopeSignal]) -> List[PchipInterpolator]:
    return [PchipInterpolator(e.distances, e.values, extrapolate=False) for e in envelopes]


def _evaluate(interpolant: PchipInterpolator, d) -> np.ndarray:
    return np.nan_to_num(interpolant(d), nan=0.0)


def _solve_stage(name: str, data_residuals, state: MapState, cfg: MapConfig,
                 logger: logging.Logger) -> Tuple[MapState, MapStageReport, LsqResult]:
    fallback = {"count": 0}

    def residuals(x):
        points = x.reshape(-1, 2)
        data, fallback["count"] = data_residuals(state.with_points(points))
        return np.concatenate([data, chain_residuals(points, state.reg_alpha)])

    problem = LsqProblem(residuals=residuals, x0=state.virtual_points.ravel(), max_iterations=cfg.max_iterations,
                         jacobian_step=cfg.jacobian_step, ftol=cfg.ftol, xtol=cfg.xtol)
    result = solve_lsq(problem, logger=logger)
    residuals(result.x)
    if fallback["count"]:
        logger.info(f"{name}: {fallback['count']} residuals used the fused field (latent not positive)")
    report = MapStageReport(stage=name, initial_cost=result.initial_cost, final_cost=result.cost,
                            iterations=result.iterations, converged=result.converged, reason=result.reason,
                            fallback_residuals=fallback["count"])
    return state.with_points(result.x), report, result


def solve_stage1(sensors, echo_distances, state: MapState, cfg: Optional[MapConfig] = None,
                 logger: logging.Logger = logger):
    """Fits field distances at the sensors to their first-echo distances."""
    cfg = cfg or MapConfig()
    sensors = np.asarray(sensors, dtype=float)
    echoes = np.asarray(echo_distances, dtype=float)

    def data(candidate: MapState):
        d, fallbacks = field_distances(candidate, sensors)
        return echoes - d, fallbacks

    return _solve_stage("stage1", data, state, cfg, logger)


def solve_stage2(sensors, envelopes: Sequence[EnvelopeSignal], state: MapState, cfg: Optional[MapConfig] = None,
                 logger: logging.Logger = logger):
    """Maximizes the envelope value of every measurement at its field distance."""
    cfg = cfg or MapConfig()
    sensors = np.asarray(sensors, dtype=float)
    interpolants = envelope_interpolants(envelopes)

    def data(candidate: MapState):
        d, fallbacks = field_distances(candidate, sensors)
        values = np.array([_evaluate(f, di) for f, di in zip(interpolants, d)], dtype=float)
        return 1.0 - values, fallbacks

    return _solve_stage("stage2", data, state, cfg, logger)


def das_map(sensors, envelopes: Sequence[EnvelopeSignal], grid) -> np.ndarray:
    """Delay-and-sum reflector map: sum over sensors of e_i(||x - p_i||) at each grid point."""
    grid = np.atleast_2d(np.asarray(grid, dtype=float))
    sensors = np.asarray(sensors, dtype=float)
    interpolants = envelope_interpolants(envelopes)

    def contribution(i):
        return _evaluate(interpolants[i], np.linalg.norm(grid - sensors[i], axis=1))

    return np.sum(ordered_map(contribution, range(len(sensors))), axis=0)


def plate_grid(scene: PlateScene, n: int, margin: float = 0.0) -> np.ndarray:
    lo, hi = scene.bounds
    xs = np.linspace(lo[0] - margin, hi[0] + margin, n)
    ys = np.linspace(lo[1] - margin, hi[1] + margin, n)
    gx, gy = np.meshgrid(xs, ys)
    return np.column_stack([gx.ravel(), gy.ravel()])


def latent_grid(state: MapState, grid) -> FieldQuery:
    """Distance-field query of the mapped field over grid points, for plotting."""
    return query_batch(state.model(), np.atleast_2d(np.asarray(grid, dtype=float)))


def field_rmse(state: MapState, scene: PlateScene, n: int = 100) -> Optional[float]:
    """Interior RMSE of the mapped distance field against the analytic rectangle field."""
    lo, hi = scene.bounds
    grid = plate_grid(scene, n)
    grid = grid[scene.contains(grid)]
    d, _ = field_distances(state, grid)
    truth = rect_distance(float(hi[0] - lo[0]), float(hi[1] - lo[1]), grid - lo)
    valid = np.isfinite(d)
    if not np.any(valid):
        return None
    return float(np.sqrt(np.mean((d[valid] - truth[valid]) ** 2)))


def first_echoes(envelopes: Sequence[EnvelopeSignal], threshold: float, prominence: float,
                 measurements=None, ugw: Optional[UgwConfig] = None, logger: logging.Logger = logger):
    """
    Indices of measurements with a detectable first echo and those echo distances.
    Given the raw measurements and their config, overlapping echoes are separated.
    """
    keep, distances = [], []
    for i, e in enumerate(envelopes):
        try:
            if measurements is not None and ugw is not None:
                d = resolve_first_echo(measurements[i], ugw, float(e.distances[-1]), threshold, prominence,
                                       e=e, logger=logger)
            else:
                d = first_echo_distance(e, threshold, prominence)
            distances.append(d)
            keep.append(i)
        except NoEchoError:
            logger.info(f"measurement {i}: no first echo, left out of stage 1")
    return np.array(keep, dtype=int), np.array(distances)


def run_mapping(config: RunConfig, sensors, measurements, logger: logging.Logger = logger):
    """
    Two-stage (or envelope-only) mapping from measurements at known sensor positions.

    Returns:
        (state, report)
    """
    cfg = config.mapping
    sensors = np.asarray(sensors, dtype=float)
    scene = PlateScene.from_config(config.plate)
    envelopes = grid_envelopes(measurements, config.ugw, scene.diagonal, logger=logger)
    keep, echoes = first_echoes(envelopes, config.ugw.threshold, config.ugw.prominence,
                                measurements=measurements, ugw=config.ugw, logger=logger)
    if len(keep) == 0:
        raise NoEchoError(config.ugw.threshold, config.ugw.prominence)

    kind = KernelKind.MATERN32 if cfg.distance_method == "loggpis" else KernelKind(config.kernel.kind)
    kernel = KernelModel(kind=kind, lengthscale=cfg.lengthscale, rq_alpha=config.kernel.rq_alpha)
    q = cfg.q or default_virtual_count(scene.perimeter, cfg.lengthscale)
    state = MapState(virtual_points=init_virtual_points(sensors[keep], echoes, q, cfg.init_margin),
                     reg_alpha=cfg.reg_alpha, kernel=kernel, sigma_n=cfg.sigma_n,
                     distance_method=cfg.distance_method)

    stages = []
    if cfg.mode == "two-stage":
        state, report, _ = solve_stage1(sensors[keep], echoes, state, cfg, logger=logger)
        stages.append(report)
    state, report, _ = solve_stage2(sensors, envelopes, state, cfg, logger=logger)
    stages.append(report)

    is_rectangle = len(scene.polygon) == 4 and np.allclose(
        scene.polygon, PlateScene.rectangle(*scene.bounds[1]).polygon)
    return state, MapReport(
        virtual_points=[tuple(map(float, p)) for p in state.virtual_points],
        reg_alpha=cfg.reg_alpha,
        lengthscale=cfg.lengthscale,
        sigma_n=cfg.sigma_n,
        kernel=kernel.kind.value,
        distance_method=cfg.distance_method,
        mode=cfg.mode,
        stages=stages,
        interior_rmse=field_rmse(state, scene, cfg.field_grid) if is_rectangle else None,
    )
