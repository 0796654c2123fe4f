"""
Learning the corrective noise term sigma_n.

sigma_n is chosen to minimize the Mahalanobis distance between the latent
posterior on a calibration grid and the ideal latent field kappa(d) computed
from true distances. The grid is first thinned to points at least a
lengthscale apart so that the posterior covariance is well conditioned. The
search scans log10(sigma_n) over the bounds and refines the best bracket by
golden-section search.
"""

import logging
from typing import Optional

import numpy as np
from scipy.linalg import solve_triangular
from scipy.optimize import minimize_scalar
from scipy.spatial import cKDTree

from ..core.exceptions import CalibrationError, GramNotPositiveDefiniteError, InvalidArgumentError
from ..core.models import CalibrationConfig
from .gp_field import (
    PointCloud,
    build_model,
    infer_batch,
    infer_latent_covariance,
    jittered_cholesky,
)
from .kernels import KernelModel, kernel_eval

logger = logging.getLogger(__name__)

SPACING_SLACK = 1e-9


def mahalanobis_objective(cloud: PointCloud, kernel: KernelModel, grid: np.ndarray, target: np.ndarray,
                          sigma_n: float, full_covariance: bool = True,
                          logger: logging.Logger = logger) -> float:
    """(o_q - o_hat)^T Sigma^-1 (o_q - o_hat) for a model built with sigma_n."""
    model = build_model(cloud, kernel, sigma_n, logger=logger)
    if full_covariance:
        o_hat = infer_batch(model, grid, gradient=False).o_hat
        cov = infer_latent_covariance(model, grid)
        try:
            factor, _ = jittered_cholesky(cov, logger=logger)
        except GramNotPositiveDefiniteError as e:
            raise CalibrationError(f"posterior latent covariance is singular at sigma_n={sigma_n:.3e}: {e}")
        z = solve_triangular(factor, target - o_hat, lower=True, check_finite=False)
        return float(z @ z)

    lq = infer_batch(model, grid, gradient=False)
    var = lq.o_var + 1e-12 * max(float(np.mean(lq.o_var)), np.finfo(float).tiny)
    if not np.all(var > 0):
        raise CalibrationError(f"posterior latent variance vanishes at sigma_n={sigma_n:.3e}")
    return float(np.sum((target - lq.o_hat) ** 2 / var))


def spread_subset(points: np.ndarray, spacing: float) -> np.ndarray:
    """Indices of a greedy subset whose points are pairwise at least spacing apart, in input order."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if spacing <= 0 or len(points) < 2:
        return np.arange(len(points))
    tree = cKDTree(points)
    free = np.ones(len(points), dtype=bool)
    keep = []
    for i in range(len(points)):
        if free[i]:
            keep.append(i)
            free[tree.query_ball_point(points[i], spacing * (1.0 - SPACING_SLACK))] = False
    return np.array(keep, dtype=int)


def _search(objective, lower: float, upper: float, config: CalibrationConfig):
    """Scan log-spaced values, then golden-section search inside the best bracket."""
    xs = np.linspace(lower, upper, config.scan_points)
    values = np.array([objective(x) for x in xs])
    for x, value in ((xs[0], values[0]), (xs[-1], values[-1])):
        if not np.isfinite(value):
            raise CalibrationError(f"calibration objective is not finite at sigma_n={10.0 ** x:.3e}")
    values = np.where(np.isfinite(values), values, np.inf)
    best = int(np.argmin(values))
    if best in (0, len(xs) - 1) or not values[best] < values[best + 1]:
        return float(xs[best]), float(values[best])

    # relative tolerance in scipy's golden search
    xtol = config.log_tolerance / (2.0 * max(abs(lower), abs(upper), 1.0))
    result = minimize_scalar(objective, bracket=(xs[best - 1], xs[best], xs[best + 1]), method="golden",
                             options={"xtol": xtol})
    if result.fun <= values[best]:
        return float(np.clip(result.x, lower, upper)), float(result.fun)
    return float(xs[best]), float(values[best])


def learn_sigma_n(cloud: PointCloud, kernel: KernelModel, query_grid, gt_distances,
                  config: Optional[CalibrationConfig] = None,
                  logger: logging.Logger = logger) -> float:
    """
    Returns sigma_n* in [config.lower, config.upper].

    Raises:
        CalibrationError: if the objective is not finite at both search bounds
            or the posterior covariance stays singular after jitter.
    """
    config = config or CalibrationConfig()
    grid = query_grid.points if isinstance(query_grid, PointCloud) else np.atleast_2d(np.asarray(query_grid, float))
    gt = np.asarray(gt_distances, dtype=float)
    if grid.shape[0] != gt.shape[0]:
        raise InvalidArgumentError(
            f"query grid has {grid.shape[0]} points but {gt.shape[0]} ground-truth distances were given")
    if not config.lower < config.upper:
        raise InvalidArgumentError(f"search bounds must satisfy lower < upper, got [{config.lower}, {config.upper}]")

    keep = spread_subset(grid, config.spacing * kernel.lengthscale)
    if len(keep) < grid.shape[0]:
        logger.debug(f"Calibration grid thinned from {grid.shape[0]} to {len(keep)} points")
    grid, gt = grid[keep], gt[keep]
    target = kernel_eval(kernel, gt)
    full = grid.shape[0] <= config.full_covariance_limit

    def objective(log_sigma):
        return mahalanobis_objective(cloud, kernel, grid, target, 10.0 ** log_sigma, full, logger=logger)

    log_sigma, value = _search(objective, np.log10(config.lower), np.log10(config.upper), config)
    sigma_n = float(10.0 ** log_sigma)
    logger.info(f"Learned sigma_n={sigma_n:.4e} for {kernel.kind.value} kernel "
                f"(l={kernel.lengthscale}, {grid.shape[0]} grid points, "
                f"{'full' if full else 'diagonal'} covariance, objective {value:.4e})")
    return sigma_n
