"""
Distance field on top of the latent GP: capping, reverting, failure status,
the gradient-discrepancy uncertainty proxy and the GP / smooth-min fusion.
"""

from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np
from scipy.special import expit

from ..config_manager import get_default_smooth_min_lambda
from ..core.exceptions import FieldNotPositiveError, InvalidArgumentError
from .base_field import (
    STATUS_CODES,
    DistanceField,
    FieldPoint,
    FieldQuery,
    FieldStatus,
    as_query_points,
)
from .baselines import smooth_min
from .gp_field import LatentFieldModel, PointCloud, infer_batch
from .kernels import KernelModel, kernel_derivative, reverting

PROXY_EPS = 1e-12
GRADIENT_EPS = 1e-12

OK = STATUS_CODES[FieldStatus.OK]
CAPPED = STATUS_CODES[FieldStatus.CAPPED]
NOT_POSITIVE = STATUS_CODES[FieldStatus.NOT_POSITIVE]


def _proxy_values(kernel: KernelModel, d_hat, grad, grad_cov) -> np.ndarray:
    m = np.abs(kernel_derivative(kernel, d_hat))
    g = np.linalg.norm(grad, axis=-1)
    flat = g < GRADIENT_EPS
    unit = np.divide(grad, g[:, None], out=np.zeros_like(grad), where=~flat[:, None])
    s2 = np.einsum("mi,mij,mj->m", unit, grad_cov, unit)
    if np.any(flat):
        s2[flat] = np.linalg.eigvalsh(grad_cov[flat])[:, -1]
    s = np.sqrt(np.maximum(s2, 0.0))
    return np.abs(m - g) / np.maximum(s, PROXY_EPS)


def uncertainty_proxy(model: LatentFieldModel, query: Union[FieldQuery, FieldPoint],
                      grad_cov: Optional[np.ndarray] = None):
    """
    Standardized discrepancy between |kappa'(d_hat)| and the inferred gradient norm.

    The spread is the gradient covariance propagated through the norm,
    g^T Sigma g / |g|^2, or its largest eigenvalue where the gradient vanishes.

    Raises:
        FieldNotPositiveError: for queries whose latent value is not positive.
    """
    if isinstance(query, FieldPoint):
        if query.status is FieldStatus.NOT_POSITIVE:
            raise FieldNotPositiveError(query.o_hat)
        if grad_cov is None:
            raise InvalidArgumentError("grad_cov is required for a single-point query")
        return float(_proxy_values(model.kernel, np.array([query.d_hat]), query.grad[None, :],
                                   np.asarray(grad_cov)[None, :, :])[0])
    if np.any(query.status_codes == NOT_POSITIVE):
        raise FieldNotPositiveError(float(np.min(query.o_hat)))
    cov = query.grad_cov if grad_cov is None else grad_cov
    if cov is None:
        raise InvalidArgumentError("query carries no gradient covariance")
    return _proxy_values(model.kernel, query.d_hat, query.grad, cov)


def query_batch(model: LatentFieldModel, points: np.ndarray) -> FieldQuery:
    lq = infer_batch(model, points)
    o_hat = lq.o_hat
    status = np.full(o_hat.shape, OK, dtype=np.uint8)
    status[o_hat > 1.0] = CAPPED
    status[o_hat <= 0.0] = NOT_POSITIVE

    d_hat = np.full(o_hat.shape, np.nan)
    d_hat[status == CAPPED] = 0.0
    ok = status == OK
    if np.any(ok):
        d_hat[ok] = reverting(model.kernel, o_hat[ok])

    uncertainty = np.full(o_hat.shape, np.nan)
    valid = status != NOT_POSITIVE
    if np.any(valid):
        uncertainty[valid] = _proxy_values(model.kernel, d_hat[valid], lq.grad[valid], lq.grad_cov[valid])

    return FieldQuery(d_hat=d_hat, o_hat=o_hat, grad=lq.grad, uncertainty=uncertainty,
                      status_codes=status, grad_cov=lq.grad_cov)


def query_distance(model: LatentFieldModel, x) -> Union[FieldQuery, FieldPoint]:
    """
    Distance estimate at x. Failure modes are reported through the status:
    latent values above 1 are capped to distance 0 (CAPPED), non-positive
    ones leave d_hat NaN (NOT_POSITIVE).
    """
    pts, single = as_query_points(x, model.dim)
    result = query_batch(model, pts)
    return result.point(0) if single else result


def query_fused(model: LatentFieldModel, cloud: PointCloud, x, lam: Optional[float] = None,
                center: Optional[float] = None, width: Optional[float] = None):
    """
    Blend of the GP distance (trusted near the surface) and the smooth minimum
    (trusted far away) with weight w = 1 / (1 + exp((d_sm - center) / width)).

    center defaults to 2l and width to l/2. Where the GP field is not positive
    the smooth minimum is returned. Every fused value is a valid distance, so
    all statuses are OK; o_hat, grad and uncertainty are the GP's.
    """
    lam = get_default_smooth_min_lambda() if lam is None else lam
    l = model.kernel.lengthscale
    center = 2.0 * l if center is None else center
    width = 0.5 * l if width is None else width
    pts, single = as_query_points(x, model.dim)

    gp = query_batch(model, pts)
    d_sm = smooth_min(cloud, pts, lam)
    weight = expit(-(d_sm - center) / width)
    valid = gp.valid
    weight[~valid] = 0.0
    d_gp = np.where(valid, gp.d_hat, 0.0)
    fused = weight * d_gp + (1.0 - weight) * d_sm

    result = FieldQuery(d_hat=fused, o_hat=gp.o_hat, grad=gp.grad, uncertainty=gp.uncertainty,
                        status_codes=np.full(fused.shape, OK, dtype=np.uint8), grad_cov=gp.grad_cov)
    return result.point(0) if single else result


def distance_gradient(query: FieldQuery, kernel: KernelModel) -> np.ndarray:
    """Gradient of d_hat by the chain rule, grad(o_hat) / kappa'(d_hat); NaN where undefined."""
    out = np.full(query.grad.shape, np.nan)
    usable = query.status_codes == OK
    if not np.any(usable):
        return out
    slope = np.asarray(kernel_derivative(kernel, query.d_hat[usable]))
    nonzero = slope != 0
    rows = np.flatnonzero(usable)[nonzero]
    out[rows] = query.grad[rows] / slope[nonzero, None]
    return out


@dataclass(frozen=True)
class LineProfile:
    s: np.ndarray  # arc length from start
    points: np.ndarray
    d_hat: np.ndarray
    uncertainty: np.ndarray
    status_codes: np.ndarray
    truth: Optional[np.ndarray] = None

    @property
    def error(self) -> Optional[np.ndarray]:
        return None if self.truth is None else self.d_hat - self.truth


def line_profile(field: DistanceField, start, end, n: int = 200,
                 truth: Optional[Callable[[np.ndarray], np.ndarray]] = None) -> LineProfile:
    """Field values (and errors, given a ground-truth callable) along a straight segment."""
    if n < 2:
        raise InvalidArgumentError(f"line profile needs at least 2 samples, got {n}")
    start = np.asarray(start, dtype=float)
    end = np.asarray(end, dtype=float)
    t = np.linspace(0.0, 1.0, n)
    points = start + t[:, None] * (end - start)
    result = field.query(points)
    return LineProfile(
        s=t * np.linalg.norm(end - start),
        points=points,
        d_hat=result.d_hat,
        uncertainty=result.uncertainty,
        status_codes=result.status_codes,
        truth=None if truth is None else np.asarray(truth(points), dtype=float),
    )


class GpDistanceField(DistanceField):
    """Reverting-function distance field over a latent GP model."""

    def __init__(self, model: LatentFieldModel, logger=None):
        super().__init__()
        if logger is not None:
            self.logger = logger
        self.model = model
        self.name = f"ours-{model.kernel.kind.value}"

    def query(self, points) -> FieldQuery:
        pts, _ = as_query_points(points, self.model.dim)
        return query_batch(self.model, pts)


class FusedDistanceField(DistanceField):
    name = "fused"

    def __init__(self, model: LatentFieldModel, cloud: PointCloud, lam: Optional[float] = None,
                 center: Optional[float] = None, width: Optional[float] = None, logger=None):
        super().__init__()
        if logger is not None:
            self.logger = logger
        self.model = model
        self.cloud = cloud
        self.lam = get_default_smooth_min_lambda() if lam is None else lam
        self.center = center
        self.width = width

    def query(self, points) -> FieldQuery:
        pts, _ = as_query_points(points, self.model.dim)
        return query_fused(self.model, self.cloud, pts, self.lam, self.center, self.width)
