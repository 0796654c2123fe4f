"""
Particle-filter echolocation on a plate.

Each step moves the particles by the reported odometry and reweights them
with w <- w * exp(beta * e(d(p))), where e is the envelope of the measurement
taken at the true position and d(p) the distance field at a particle.
The estimate is the mean of the best-weighted fraction, taken before the
particles are resampled every few steps.
"""

import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from ..core.exceptions import InvalidArgumentError
from ..core.models import FilterConfig, RunConfig
from ..fields.base_field import DistanceField
from ..fields.baselines import LogGpisField, RectangleField, build_loggpis_model
from ..fields.distance import GpDistanceField
from ..fields.gp_field import PointCloud, build_model
from ..fields.kernels import KernelModel
from ..ugw.ugw_signal import EnvelopeSignal, PlateScene, grid_envelopes, simulate_grid_measurements
from ..utils.parallel import ordered_map
from ..utils.seeding import module_rng

logger = logging.getLogger(__name__)

NEIGHBOURS = np.array([[0, 1], [0, -1], [1, 0], [-1, 0]])


@dataclass(frozen=True)
class ParticleSet:
    positions: np.ndarray  # (N, 2)
    weights: np.ndarray  # (N,), sums to 1

    def __len__(self):
        return len(self.weights)


@dataclass(frozen=True)
class FilterStep:
    odom_delta: np.ndarray
    envelope: EnvelopeSignal
    true_position: Optional[np.ndarray] = None


@dataclass(frozen=True)
class FilterTrace:
    estimates: np.ndarray  # (T, 2)
    errors: Optional[np.ndarray] = None  # (T,)
    divergences: int = 0


@dataclass(frozen=True)
class ErrorSummary:
    median: np.ndarray
    q25: np.ndarray
    q75: np.ndarray
    converged_median: float


def uniform_particles(scene: PlateScene, n: int, rng: np.random.Generator) -> ParticleSet:
    """n particles drawn uniformly inside the plate polygon by rejection from its bounding box."""
    lo, hi = scene.bounds
    chosen = []
    count = 0
    while count < n:
        batch = rng.uniform(lo, hi, size=(max(2 * (n - count), 16), 2))
        batch = batch[scene.contains(batch)]
        chosen.append(batch)
        count += len(batch)
    return ParticleSet(np.concatenate(chosen)[:n], np.full(n, 1.0 / n))


def motion_update(particles: ParticleSet, odom_delta, cfg: FilterConfig,
                  rng: np.random.Generator) -> ParticleSet:
    noise = rng.normal(0.0, cfg.odom_noise_sd, size=particles.positions.shape) if cfg.odom_noise_sd > 0 else 0.0
    return ParticleSet(particles.positions + np.asarray(odom_delta, dtype=float) + noise, particles.weights)


def measurement_update(particles: ParticleSet, e: EnvelopeSignal, field: DistanceField, cfg: FilterConfig,
                       scene: Optional[PlateScene] = None, rng: Optional[np.random.Generator] = None,
                       logger: logging.Logger = logger) -> Tuple[ParticleSet, bool]:
    """
    Reweights and renormalizes. Particles where the field fails get e = 0 (factor 1).
    If no weight survives, particles are re-drawn uniformly (given scene and rng)
    or their weights reset; the second return value flags that divergence.
    """
    d = field.query(particles.positions).d_hat
    values = np.where(np.isfinite(d), e.at(np.nan_to_num(d, nan=0.0)), 0.0)
    weights = particles.weights * np.exp(cfg.beta * values)
    total = weights.sum()
    if not np.isfinite(total) or total <= 0:
        logger.warning(f"Particle weights collapsed (sum={total}); reinitializing uniformly")
        n = len(particles)
        if scene is not None and rng is not None:
            return uniform_particles(scene, n, rng), True
        return ParticleSet(particles.positions, np.full(n, 1.0 / n)), True
    return ParticleSet(particles.positions, weights / total), False


def resample(particles: ParticleSet, rng: np.random.Generator) -> ParticleSet:
    """Systematic (low-variance) resampling; weights are uniform afterwards."""
    n = len(particles)
    offsets = (rng.random() + np.arange(n)) / n
    cumulative = np.cumsum(particles.weights)
    cumulative[-1] = 1.0
    idx = np.minimum(np.searchsorted(cumulative, offsets, side="right"), n - 1)
    return ParticleSet(particles.positions[idx], np.full(n, 1.0 / n))


def estimate(particles: ParticleSet, q: float) -> np.ndarray:
    """Mean position of the ceil(q N) highest-weight particles, ties broken by index."""
    if not 0 < q <= 1:
        raise InvalidArgumentError(f"estimate quantile must lie in (0, 1], got {q}")
    k = max(1, math.ceil(q * len(particles)))
    best = np.argsort(-particles.weights, kind="stable")[:k]
    return particles.positions[best].mean(axis=0)


def run_filter(trajectory: Sequence[FilterStep], scene: PlateScene, field: DistanceField, cfg: FilterConfig,
               rng: np.random.Generator, logger: logging.Logger = logger) -> FilterTrace:
    particles = uniform_particles(scene, cfg.n_particles, rng)
    estimates, errors = [], []
    divergences = 0
    for t, step in enumerate(trajectory, start=1):
        particles = motion_update(particles, step.odom_delta, cfg, rng)
        particles, diverged = measurement_update(particles, step.envelope, field, cfg, scene, rng, logger=logger)
        divergences += int(diverged)
        # before resampling: the weights are uniform afterwards
        position = estimate(particles, cfg.estimate_quantile)
        if t % cfg.resample_interval == 0:
            particles = resample(particles, rng)
        estimates.append(position)
        if step.true_position is not None:
            errors.append(float(np.linalg.norm(position - step.true_position)))
    return FilterTrace(
        estimates=np.array(estimates),
        errors=np.array(errors) if len(errors) == len(estimates) else None,
        divergences=divergences,
    )


def generate_trajectories(grid_shape: Tuple[int, int], n: int, steps: int,
                          rng: np.random.Generator) -> List[np.ndarray]:
    """Random 4-neighbour walks over a rows x cols grid, as flat row-major cell indices."""
    rows, cols = grid_shape
    if rows * cols < 2:
        raise InvalidArgumentError(f"grid {rows}x{cols} has no neighbouring cells to walk to")
    walks = []
    for _ in range(n):
        cell = np.array([rng.integers(rows), rng.integers(cols)])
        walk = [cell]
        for _ in range(steps - 1):
            candidates = cell + NEIGHBOURS
            inside = (candidates[:, 0] >= 0) & (candidates[:, 0] < rows) & \
                     (candidates[:, 1] >= 0) & (candidates[:, 1] < cols)
            options = candidates[inside]
            cell = options[rng.integers(len(options))]
            walk.append(cell)
        walk = np.array(walk)
        walks.append(walk[:, 0] * cols + walk[:, 1])
    return walks


def build_trajectory(walk: np.ndarray, positions: np.ndarray, envelopes: Sequence[EnvelopeSignal],
                     odom_noise_sd: float, rng: np.random.Generator) -> List[FilterStep]:
    """Filter steps along a walk; odometry is the true displacement plus Gaussian noise."""
    steps = []
    previous = positions[walk[0]]
    for cell in walk:
        delta = positions[cell] - previous
        if odom_noise_sd > 0:
            delta = delta + rng.normal(0.0, odom_noise_sd, size=2)
        steps.append(FilterStep(odom_delta=delta, envelope=envelopes[cell], true_position=positions[cell]))
        previous = positions[cell]
    return steps


def summarize_errors(errors: np.ndarray, start_step: int = 0) -> ErrorSummary:
    """Per-step median and quartiles over trajectories, and the median after start_step."""
    errors = np.atleast_2d(np.asarray(errors, dtype=float))
    q25, median, q75 = np.percentile(errors, [25, 50, 75], axis=0)
    tail = errors[:, start_step:]
    converged = float(np.median(tail)) if tail.size else float("nan")
    return ErrorSummary(median=median, q25=q25, q75=q75, converged_median=converged)


def build_oracle(name: str, scene: PlateScene, cfg: FilterConfig, kernel: KernelModel) -> DistanceField:
    """Distance field used to weigh particles: ours | loggpis | rect."""
    if name == "rect":
        lo, hi = scene.bounds
        if len(scene.polygon) != 4 or not np.allclose(scene.polygon, PlateScene.rectangle(*hi).polygon):
            raise InvalidArgumentError("the rect oracle needs an axis-aligned rectangle plate anchored at the origin")
        return RectangleField(float(hi[0]), float(hi[1]))
    cloud = PointCloud(scene.boundary_points(cfg.boundary_gap))
    lengthscale = cfg.lengthscale or 1.5 * cfg.boundary_gap
    if name == "ours":
        kernel = KernelModel(kind=kernel.kind, lengthscale=lengthscale, rq_alpha=kernel.rq_alpha)
        return GpDistanceField(build_model(cloud, kernel, cfg.sigma_n))
    if name == "loggpis":
        return LogGpisField(build_loggpis_model(cloud, lengthscale, cfg.sigma_n))
    raise InvalidArgumentError(f"unknown distance oracle {name!r}")


def run_echolocation(config: RunConfig, measurements: Optional[np.ndarray] = None,
                     positions: Optional[np.ndarray] = None, walks: Optional[List[np.ndarray]] = None,
                     logger: logging.Logger = logger):
    """
    Runs filters along walks over the measurement grid; cfg.trajectories random
    walks of cfg.steps cells are generated when none are given.

    Returns:
        (errors, summary): (trajectories, steps) position errors and their ErrorSummary.
    """
    cfg = config.filter
    scene = PlateScene.from_config(config.plate)
    if measurements is None:
        positions, measurements = simulate_grid_measurements(scene, config.ugw, config.seed)
    elif positions is None:
        raise InvalidArgumentError("loaded measurements need their positions")
    envelopes = grid_envelopes(measurements, config.ugw, scene.diagonal, logger=logger)
    field = build_oracle(cfg.distance_oracle, scene, cfg, KernelModel.from_config(config.kernel))

    if walks is None:
        walks = generate_trajectories((config.ugw.grid_rows, config.ugw.grid_cols), cfg.trajectories, cfg.steps,
                                      module_rng(config.seed, "echoloc.trajectories"))
    for walk in walks:
        if len(walk) == 0 or np.min(walk) < 0 or np.max(walk) >= len(positions):
            raise InvalidArgumentError(f"walk cells must index the {len(positions)} measurement positions")

    def run_one(index: int) -> FilterTrace:
        steps = build_trajectory(walks[index], positions, envelopes, cfg.odom_noise_sd,
                                 module_rng(config.seed, "echoloc.odometry", index))
        trace = run_filter(steps, scene, field, cfg, module_rng(config.seed, "echoloc.filter", index), logger=logger)
        logger.info(f"trajectory {index}: final error {trace.errors[-1]:.4f} m, {trace.divergences} divergences")
        return trace

    traces = ordered_map(run_one, range(len(walks)))
    steps = min(len(trace.errors) for trace in traces)
    errors = np.stack([trace.errors[:steps] for trace in traces])
    return errors, summarize_errors(errors, min(cfg.burn_in, steps - 1))
