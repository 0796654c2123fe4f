"""
Dense GP model of the latent occupancy field.

Every surface sample is an observation of value 1. The model caches the
Cholesky factor of (K(X, X) + sigma_n^2 I) and the weight vector solved
against the all-ones target. After construction a model is immutable, so
queries may run concurrently.
"""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import LinAlgError, cho_solve, cholesky, solve_triangular
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist

from ..core.exceptions import GramNotPositiveDefiniteError, InvalidArgumentError
from .base_field import as_query_points
from .kernels import KernelModel, gradient_prior_variance, kernel_eval, kernel_gradient

logger = logging.getLogger(__name__)

JITTER_START = 1e-12  # relative to trace / n
JITTER_LIMIT = 1e-6
JITTER_GROWTH = 10.0
CHUNK_ELEMENTS = 2_000_000


@dataclass(frozen=True)
class PointCloud:
    points: np.ndarray

    def __post_init__(self):
        pts = np.array(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[0] < 1:
            raise InvalidArgumentError(f"point cloud must be a non-empty (Q, dim) array, got shape {pts.shape}")
        if pts.shape[1] not in (2, 3):
            raise InvalidArgumentError(f"point cloud dimension must be 2 or 3, got {pts.shape[1]}")
        if not np.all(np.isfinite(pts)):
            raise InvalidArgumentError("point cloud contains non-finite coordinates")
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)

    @property
    def count(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def __len__(self):
        return self.count


@dataclass(frozen=True)
class LatentFieldModel:
    cloud: PointCloud
    kernel: KernelModel
    sigma_n: float
    gram_factor: np.ndarray  # lower triangular
    weights: np.ndarray
    jitter: float = 0.0

    @property
    def dim(self) -> int:
        return self.cloud.dim


@dataclass(frozen=True)
class LatentQuery:
    """Latent inference results; scalars and (dim,) arrays for a single point, batched otherwise."""
    o_hat: Optional[np.ndarray] = None
    o_var: Optional[np.ndarray] = None
    grad: Optional[np.ndarray] = None
    grad_cov: Optional[np.ndarray] = None


def jittered_cholesky(matrix: np.ndarray, logger: logging.Logger = logger):
    """
    Lower Cholesky factor of a symmetric matrix, adding diagonal jitter when needed.

    Jitter starts at 1e-12 * trace / n and grows x10 up to 1e-6 * trace / n.

    Returns:
        (factor, jitter) with the jitter that was finally applied (0.0 if none).

    Raises:
        GramNotPositiveDefiniteError: if the factorization fails at the largest jitter.
    """
    n = matrix.shape[0]
    scale = max(float(np.trace(matrix)) / n, np.finfo(float).tiny)
    try:
        return cholesky(matrix, lower=True, check_finite=False), 0.0
    except LinAlgError:
        pass

    jitter = JITTER_START * scale
    eye = np.eye(n)
    while jitter <= JITTER_LIMIT * scale * (1 + 1e-9):
        try:
            factor = cholesky(matrix + jitter * eye, lower=True, check_finite=False)
            logger.warning(f"Cholesky needed diagonal jitter {jitter:.3e} (n={n})")
            return factor, jitter
        except LinAlgError:
            jitter *= JITTER_GROWTH
    raise GramNotPositiveDefiniteError(jitter / JITTER_GROWTH)


def build_model(cloud: PointCloud, kernel: KernelModel, sigma_n: float,
                logger: logging.Logger = logger) -> LatentFieldModel:
    if not isinstance(cloud, PointCloud):
        cloud = PointCloud(cloud)
    if not np.isfinite(sigma_n) or sigma_n < 0:
        raise InvalidArgumentError(f"sigma_n must be finite and >= 0, got {sigma_n}")
    pts = cloud.points
    gram = kernel_eval(kernel, cdist(pts, pts))
    gram[np.diag_indices_from(gram)] += sigma_n ** 2
    factor, jitter = jittered_cholesky(gram, logger=logger)
    weights = cho_solve((factor, True), np.ones(cloud.count), check_finite=False)
    factor.flags.writeable = False
    weights.flags.writeable = False
    return LatentFieldModel(cloud=cloud, kernel=kernel, sigma_n=float(sigma_n),
                            gram_factor=factor, weights=weights, jitter=jitter)


def _chunks(model: LatentFieldModel, m: int):
    size = max(1, CHUNK_ELEMENTS // (model.cloud.count * model.dim))
    for start in range(0, m, size):
        yield slice(start, min(start + size, m))


def infer_batch(model: LatentFieldModel, points: np.ndarray, latent: bool = True,
                gradient: bool = True) -> LatentQuery:
    """Batched inference over (M, dim) query points; skipped parts are None."""
    X = model.cloud.points
    L = model.gram_factor
    w = model.weights
    m, dim = points.shape
    prior = gradient_prior_variance(model.kernel)

    o_hat = np.empty(m) if latent else None
    o_var = np.empty(m) if latent else None
    grad = np.empty((m, dim)) if gradient else None
    grad_cov = np.empty((m, dim, dim)) if gradient else None

    for sl in _chunks(model, m):
        diff = points[sl, None, :] - X[None, :, :]  # (c, Q, dim)
        if latent:
            k_cross = kernel_eval(model.kernel, np.linalg.norm(diff, axis=-1))  # (c, Q)
            o_hat[sl] = k_cross @ w
            v = solve_triangular(L, k_cross.T, lower=True, check_finite=False)
            o_var[sl] = np.maximum(1.0 - np.sum(v * v, axis=0), 0.0)
        if gradient:
            g_cross = kernel_gradient(model.kernel, diff)  # (c, Q, dim)
            c = g_cross.shape[0]
            grad[sl] = np.einsum("cqd,q->cd", g_cross, w)
            rhs = g_cross.transpose(1, 0, 2).reshape(X.shape[0], c * dim)
            v = solve_triangular(L, rhs, lower=True, check_finite=False).reshape(X.shape[0], c, dim)
            cov = prior * np.eye(dim) - np.einsum("qci,qcj->cij", v, v)
            grad_cov[sl] = 0.5 * (cov + cov.transpose(0, 2, 1))

    return LatentQuery(o_hat=o_hat, o_var=o_var, grad=grad, grad_cov=grad_cov)


def _single(query: LatentQuery) -> LatentQuery:
    return LatentQuery(
        o_hat=None if query.o_hat is None else float(query.o_hat[0]),
        o_var=None if query.o_var is None else float(query.o_var[0]),
        grad=None if query.grad is None else query.grad[0],
        grad_cov=None if query.grad_cov is None else query.grad_cov[0],
    )


def infer_latent(model: LatentFieldModel, x) -> LatentQuery:
    """Posterior mean and variance of the latent field at x (one point or (M, dim))."""
    pts, single = as_query_points(x, model.dim)
    result = infer_batch(model, pts, latent=True, gradient=False)
    return _single(result) if single else result


def infer_gradient(model: LatentFieldModel, x) -> LatentQuery:
    """Posterior mean and covariance of the latent gradient at x."""
    pts, single = as_query_points(x, model.dim)
    result = infer_batch(model, pts, latent=False, gradient=True)
    return _single(result) if single else result


def infer_latent_covariance(model: LatentFieldModel, x, diagonal: bool = False) -> np.ndarray:
    """Posterior covariance of the latent values over a query set: (M, M), or its diagonal (M,)."""
    pts, _ = as_query_points(x, model.dim)
    if diagonal:
        return infer_batch(model, pts, latent=True, gradient=False).o_var
    X = model.cloud.points
    k_cross = kernel_eval(model.kernel, cdist(pts, X))
    v = solve_triangular(model.gram_factor, k_cross.T, lower=True, check_finite=False)
    cov = kernel_eval(model.kernel, cdist(pts, pts)) - v.T @ v
    return 0.5 * (cov + cov.T)


def suggest_lengthscale(cloud: PointCloud, factor: float = 1.5) -> float:
    """factor x median nearest-neighbour gap of the cloud."""
    if not isinstance(cloud, PointCloud):
        cloud = PointCloud(cloud)
    if cloud.count < 2:
        raise InvalidArgumentError("need at least two points to measure the sampling gap")
    gaps, _ = cKDTree(cloud.points).query(cloud.points, k=2)
    return factor * float(np.median(gaps[:, 1]))
