"""
Simulated distance-field benchmark.

Environments are random sum-of-sines curves over a square workspace, sampled
at a typical gap with Gaussian positional noise. Every method is scored on a
regular query grid against a dense ground-truth oracle, with RMSE split at a
close-range threshold and coverage counting valid answers.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.ndimage import uniform_filter1d
from scipy.optimize import curve_fit
from scipy.spatial import cKDTree

from ..core.exceptions import CalibrationError, InvalidArgumentError, RevertFieldError
from ..core.models import (
    BenchConfig,
    BenchEnvironmentRow,
    BenchMethodSummary,
    BenchReport,
    CalibrationConfig,
    RunConfig,
    ScatterSample,
)
from ..fields.calibrate import learn_sigma_n
from ..fields.field_factory import FieldFactory
from ..fields.gp_field import PointCloud
from ..fields.kernels import KernelModel
from ..utils.parallel import ordered_map
from ..utils.seeding import derived_seed, module_rng

logger = logging.getLogger(__name__)

PROFILE_RESOLUTION = 20001
CURVE_OFFSET = 0.5  # fraction of the workspace
CURVE_HEADROOM = 0.45  # bound on the summed amplitudes, fraction of the workspace


@dataclass(frozen=True)
class SineEnvironment:
    amplitudes: Tuple[float, ...]
    frequencies: Tuple[float, ...]
    phases: Tuple[float, ...]
    x_range: Tuple[float, float]
    offset: float
    seed: int

    def y(self, x):
        x = np.asarray(x, dtype=float)
        a, f, p = (np.asarray(v, dtype=float) for v in (self.amplitudes, self.frequencies, self.phases))
        return self.offset + np.sum(a * np.sin(np.multiply.outer(x, f) + p), axis=-1)

    def slope_bound(self) -> float:
        return float(np.sum(np.abs(np.multiply(self.amplitudes, self.frequencies))))

    def _profile(self):
        xs = np.linspace(*self.x_range, PROFILE_RESOLUTION)
        ys = self.y(xs)
        s = np.concatenate([[0.0], np.cumsum(np.hypot(np.diff(xs), np.diff(ys)))])
        return xs, s

    def arc_length(self) -> float:
        return float(self._profile()[1][-1])


def generate_environment(seed: int, config: Optional[BenchConfig] = None) -> SineEnvironment:
    config = config or BenchConfig()
    rng = np.random.default_rng(seed)
    n = int(rng.integers(config.n_terms[0], config.n_terms[1] + 1))
    amplitudes = rng.uniform(*config.amplitude_range, size=n)
    # keeps the curve inside the workspace
    headroom = CURVE_HEADROOM * config.workspace
    if amplitudes.sum() > headroom:
        amplitudes *= headroom / amplitudes.sum()
    return SineEnvironment(
        amplitudes=tuple(amplitudes),
        frequencies=tuple(rng.uniform(*config.frequency_range, size=n)),
        phases=tuple(rng.uniform(0.0, 2 * np.pi, size=n)),
        x_range=(0.0, config.workspace),
        offset=CURVE_OFFSET * config.workspace,
        seed=int(seed),
    )


def sample_cloud(env: SineEnvironment, gap: float, noise_sd: float, seed: int) -> PointCloud:
    """Points evenly spaced in arc length (about gap apart) plus isotropic Gaussian noise."""
    if gap <= 0:
        raise InvalidArgumentError(f"gap must be > 0, got {gap}")
    if noise_sd < 0:
        raise InvalidArgumentError(f"noise_sd must be >= 0, got {noise_sd}")
    xs, s = env._profile()
    n = max(1, int(round(s[-1] / gap)))
    targets = (np.arange(n) + 0.5) * s[-1] / n
    px = np.interp(targets, s, xs)
    pts = np.column_stack([px, env.y(px)])
    if noise_sd > 0:
        pts = pts + np.random.default_rng(seed).normal(0.0, noise_sd, size=pts.shape)
    return PointCloud(pts)


class GroundTruthOracle:
    """Dense noiseless curve samples behind a KD-tree; distances exact to spacing / 2."""

    def __init__(self, env: SineEnvironment, spacing: float = 1e-4):
        # arc-length spacing <= spacing needs dx <= spacing / sqrt(1 + max slope^2)
        dx = spacing / np.sqrt(1.0 + env.slope_bound() ** 2)
        n = int(np.ceil((env.x_range[1] - env.x_range[0]) / dx)) + 1
        xs = np.linspace(*env.x_range, n)
        self.spacing = spacing
        self.samples = np.column_stack([xs, env.y(xs)])
        self.tree = cKDTree(self.samples)

    def distance(self, x) -> np.ndarray:
        d, _ = self.tree.query(np.atleast_2d(np.asarray(x, dtype=float)))
        return d


def gt_distance(oracle: GroundTruthOracle, x):
    d = oracle.distance(x)
    return float(d[0]) if np.ndim(x) == 1 else d


def query_grid(size: float, n: int, origin: Tuple[float, float] = (0.0, 0.0)) -> np.ndarray:
    """Regular grid of about n points covering [origin, origin + size]^2, row-major."""
    side = max(2, int(round(np.sqrt(n))))
    axis = np.linspace(0.0, size, side)
    gx, gy = np.meshgrid(axis + origin[0], axis + origin[1])
    return np.column_stack([gx.ravel(), gy.ravel()])


def calibration_scene(bench: BenchConfig, calibration: CalibrationConfig, lengthscale: float, seed: int):
    """
    Calibration cloud, grid points within band * l of the curve, and their true distances.

    The cloud is sampled like a benchmark environment unless the calibration
    config sets its own gap or noise.
    """
    env = generate_environment(derived_seed(seed, "simbench.calibration.env"), bench)
    gap = bench.gap if calibration.point_gap is None else calibration.point_gap
    noise_sd = bench.noise_sd if calibration.noise_sd is None else calibration.noise_sd
    cloud = sample_cloud(env, gap, noise_sd,
                         derived_seed(seed, "simbench.calibration.cloud"))
    grid = query_grid(bench.workspace, calibration.grid ** 2)
    gt = GroundTruthOracle(env, bench.oracle_spacing).distance(grid)
    band = gt <= calibration.band * lengthscale
    if not np.any(band):
        raise CalibrationError(f"no calibration grid point lies within {calibration.band} lengthscales of the curve")
    return cloud, grid[band], gt[band]


def calibrate_for_bench(config: RunConfig, kinds: Sequence[str], logger: logging.Logger = logger) -> Dict[str, float]:
    """Learned sigma_n per kernel kind, falling back to field.sigma_n when calibration fails."""
    out = {}
    for kind in kinds:
        kernel = KernelModel.from_config(config.kernel).with_kind(kind)
        cloud, grid, gt = calibration_scene(config.bench, config.calibration, kernel.lengthscale, config.seed)
        try:
            out[kind] = learn_sigma_n(cloud, kernel, grid, gt, config.calibration, logger=logger)
        except RevertFieldError as e:
            logger.warning(f"Calibration failed for {kind} kernel, using sigma_n={config.field.sigma_n}: {e}")
            out[kind] = config.field.sigma_n
    return out


def method_kernel_kind(method: str, default_kind: str, fusion_kind: Optional[str] = None) -> Optional[str]:
    if method.startswith("ours-"):
        return method.split("-", 1)[1]
    if method == "loggpis":
        return "matern"
    if method == "fused":
        return fusion_kind or default_kind
    return None


def _rmse(errors: np.ndarray) -> Optional[float]:
    return float(np.sqrt(np.mean(errors ** 2))) if errors.size else None


def _score(d_hat: np.ndarray, gt: np.ndarray, close_range: float):
    valid = np.isfinite(d_hat)
    err = d_hat - gt
    close = valid & (gt < close_range)
    far = valid & (gt >= close_range)
    return _rmse(err[close]), _rmse(err[far]), _rmse(err[valid]), float(np.mean(valid))


def _nanmean(values) -> Optional[float]:
    arr = np.array([np.nan if v is None else v for v in values], dtype=float)
    return None if np.all(np.isnan(arr)) else float(np.nanmean(arr))


def run_benchmark(config: RunConfig, logger: logging.Logger = logger,
                  progress: Optional[Callable[[int], None]] = None) -> BenchReport:
    bench = config.bench
    methods = list(dict.fromkeys(bench.methods))
    fusion_kind = config.field.fusion_kernel or config.kernel.kind
    kinds = sorted({k for k in (method_kernel_kind(m, config.kernel.kind, fusion_kind) for m in methods) if k})
    if bench.sigma_n is not None:
        sigmas = {kind: bench.sigma_n for kind in kinds}
    else:
        sigmas = calibrate_for_bench(config, kinds, logger=logger)

    factory = FieldFactory(config.kernel, config.field, logger=logger)
    grid = query_grid(bench.workspace, bench.queries)
    per_env_scatter = bench.scatter_samples // bench.envs

    def run_environment(index: int):
        seed = derived_seed(config.seed, "simbench.env", index)
        env = generate_environment(seed, bench)
        cloud = sample_cloud(env, bench.gap, bench.noise_sd, derived_seed(config.seed, "simbench.cloud", index))
        gt = GroundTruthOracle(env, bench.oracle_spacing).distance(grid)
        picks = module_rng(config.seed, "simbench.scatter", index).choice(
            len(grid), size=min(per_env_scatter, len(grid)), replace=False)

        rows, scatter = [], []
        for method in methods:
            kind = method_kernel_kind(method, config.kernel.kind, fusion_kind)
            try:
                field = factory.create_field(method, cloud, sigma_n=sigmas.get(kind, config.field.sigma_n))
                d_hat = field.query(grid).d_hat
            except RevertFieldError as e:
                logger.warning(f"env {index}: {method} failed, counted as zero coverage: {e}")
                d_hat = np.full(len(grid), np.nan)
            close, far, total, coverage = _score(d_hat, gt, bench.close_range)
            rows.append(BenchEnvironmentRow(env=index, seed=seed, points=cloud.count, method=method,
                                            close_rmse=close, far_rmse=far, rmse=total, coverage=coverage))
            scatter.extend(
                ScatterSample(env=index, method=method, true_distance=float(gt[i]), error=float(d_hat[i] - gt[i]))
                for i in picks if np.isfinite(d_hat[i]))
        logger.info(f"env {index}: {cloud.count} points, "
                    + ", ".join(f"{r.method} rmse={r.rmse}" for r in rows))
        if progress is not None:
            progress(index)
        return rows, scatter

    results = ordered_map(run_environment, range(bench.envs))
    environments = [row for rows, _ in results for row in rows]
    scatter = [sample for _, samples in results for sample in samples]

    summaries = []
    for method in methods:
        rows = [r for r in environments if r.method == method]
        summaries.append(BenchMethodSummary(
            method=method,
            close_rmse=_nanmean(r.close_rmse for r in rows),
            far_rmse=_nanmean(r.far_rmse for r in rows),
            rmse=_nanmean(r.rmse for r in rows),
            coverage=float(np.mean([r.coverage for r in rows])),
        ))

    return BenchReport(
        methods=summaries,
        environments=environments,
        sigma_n={kind: float(s) for kind, s in sigmas.items()},
        fused_wins=count_fused_wins(environments, f"ours-{fusion_kind}"),
        fused_baseline=f"ours-{fusion_kind}" if "fused" in methods else None,
        close_range=bench.close_range,
        envs=bench.envs,
        queries=len(grid),
        scatter=scatter,
    )


def count_fused_wins(rows: List[BenchEnvironmentRow], gp_method: str) -> Optional[int]:
    """Environments where the fused RMSE is at most min(GP-only, smooth-min) RMSE."""
    by_env: Dict[int, Dict[str, Optional[float]]] = {}
    for row in rows:
        by_env.setdefault(row.env, {})[row.method] = row.rmse
    needed = ("fused", gp_method, "smoothmin")
    if not by_env or not all(m in next(iter(by_env.values())) for m in needed):
        return None
    wins = 0
    for scores in by_env.values():
        fused, gp, sm = (scores[m] for m in needed)
        rivals = [v for v in (gp, sm) if v is not None]
        if fused is not None and (not rivals or fused <= min(rivals)):
            wins += 1
    return wins


def smooth_profile(true_distance, abs_error, window: int = 101):
    """Moving average of |error| ordered by true distance; returns (distance, smoothed error)."""
    d = np.asarray(true_distance, dtype=float)
    e = np.abs(np.asarray(abs_error, dtype=float))
    order = np.argsort(d, kind="stable")
    window = max(1, min(window, len(d)))
    return d[order], uniform_filter1d(e[order], size=window, mode="nearest")


@dataclass(frozen=True)
class LogProfileFit:
    a: float
    b: float
    r_squared: float


def _log_curve(d, a, b):
    return a * np.log1p(b * d)


def fit_log_profile(distance, error, p0=(0.01, 10.0)) -> LogProfileFit:
    """Least-squares fit of error = a log(1 + b d)."""
    d = np.asarray(distance, dtype=float)
    e = np.asarray(error, dtype=float)
    params, _ = curve_fit(_log_curve, d, e, p0=p0, bounds=([-np.inf, 0.0], [np.inf, np.inf]))
    residual = e - _log_curve(d, *params)
    total = np.sum((e - np.mean(e)) ** 2)
    r2 = 1.0 - np.sum(residual ** 2) / total if total > 0 else 1.0
    return LogProfileFit(a=float(params[0]), b=float(params[1]), r_squared=float(r2))
