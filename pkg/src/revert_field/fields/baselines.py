"""
Reference distance fields: smooth minimum over the point cloud, LogGPIS and
the analytic distance to a rectangle boundary.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.spatial.distance import cdist
from scipy.special import softmax

from ..config_manager import get_default_smooth_min_lambda
from ..core.exceptions import InvalidArgumentError
from .base_field import (
    STATUS_CODES,
    DistanceField,
    FieldQuery,
    FieldStatus,
    as_query_points,
    plain_query,
)
from .gp_field import CHUNK_ELEMENTS, LatentFieldModel, PointCloud, build_model, infer_batch
from .kernels import SQRT3, KernelKind, KernelModel


def _cloud_points(cloud) -> np.ndarray:
    pts = cloud.points if isinstance(cloud, PointCloud) else np.atleast_2d(np.asarray(cloud, dtype=float))
    if pts.size == 0:
        raise InvalidArgumentError("smooth minimum over an empty point cloud")
    return pts


def smooth_min(cloud, x, lam: Optional[float] = None):
    """
    Exponentially weighted average of point distances, sum d_i e^(lam d_i) / sum e^(lam d_i).
    lam < 0 concentrates the weights on the nearest points.
    """
    lam = get_default_smooth_min_lambda() if lam is None else lam
    if not np.isfinite(lam) or lam >= 0:
        raise InvalidArgumentError(f"smooth-min lambda must be finite and < 0, got {lam}")
    X = _cloud_points(cloud)
    pts, single = as_query_points(x, X.shape[1])
    out = np.empty(len(pts))
    size = max(1, CHUNK_ELEMENTS // X.shape[0])
    for start in range(0, len(pts), size):
        d = cdist(pts[start:start + size], X)
        out[start:start + size] = np.sum(d * softmax(lam * d, axis=1), axis=1)
    return float(out[0]) if single else out


@dataclass(frozen=True)
class LogGpisModel:
    latent: LatentFieldModel

    def __post_init__(self):
        if self.latent.kernel.kind is not KernelKind.MATERN32:
            raise InvalidArgumentError(f"LogGPIS needs a Matern 3/2 kernel, got {self.latent.kernel.kind.value}")

    @property
    def lengthscale(self) -> float:
        return self.latent.kernel.lengthscale


def build_loggpis_model(cloud: PointCloud, lengthscale: float, sigma_n: float) -> LogGpisModel:
    kernel = KernelModel(kind=KernelKind.MATERN32, lengthscale=lengthscale)
    return LogGpisModel(build_model(cloud, kernel, sigma_n))


def loggpis_distance(model: LogGpisModel, x):
    """d = -(l / sqrt 3) log o_hat, capped at 1 and failing for o_hat <= 0 like the reverting field."""
    pts, single = as_query_points(x, model.latent.dim)
    o_hat = infer_batch(model.latent, pts, gradient=False).o_hat
    status = np.full(o_hat.shape, STATUS_CODES[FieldStatus.OK], dtype=np.uint8)
    status[o_hat > 1.0] = STATUS_CODES[FieldStatus.CAPPED]
    status[o_hat <= 0.0] = STATUS_CODES[FieldStatus.NOT_POSITIVE]

    d_hat = np.full(o_hat.shape, np.nan)
    d_hat[o_hat > 1.0] = 0.0
    ok = status == STATUS_CODES[FieldStatus.OK]
    d_hat[ok] = np.abs(-(model.lengthscale / SQRT3) * np.log(o_hat[ok]))

    result = plain_query(d_hat, pts.shape[1])
    result = FieldQuery(d_hat=d_hat, o_hat=o_hat, grad=result.grad, uncertainty=result.uncertainty,
                        status_codes=status)
    return result.point(0) if single else result


def rect_distance(width: float, height: float, x):
    """Exact unsigned distance to the boundary of the rectangle [0, width] x [0, height]."""
    if width <= 0 or height <= 0:
        raise InvalidArgumentError(f"rectangle dimensions must be positive, got {width} x {height}")
    pts, single = as_query_points(x, 2)
    px, py = pts[:, 0], pts[:, 1]
    inside = (px >= 0) & (px <= width) & (py >= 0) & (py <= height)
    interior = np.minimum.reduce([px, width - px, py, height - py])
    dx = np.maximum.reduce([-px, np.zeros_like(px), px - width])
    dy = np.maximum.reduce([-py, np.zeros_like(py), py - height])
    out = np.where(inside, interior, np.hypot(dx, dy))
    return float(out[0]) if single else out


class SmoothMinField(DistanceField):
    name = "smoothmin"

    def __init__(self, cloud: PointCloud, lam: Optional[float] = None):
        super().__init__()
        self.cloud = cloud
        self.lam = get_default_smooth_min_lambda() if lam is None else lam

    def query(self, points) -> FieldQuery:
        pts, _ = as_query_points(points, self.cloud.dim)
        return plain_query(smooth_min(self.cloud, pts, self.lam), pts.shape[1])


class LogGpisField(DistanceField):
    name = "loggpis"

    def __init__(self, model: LogGpisModel):
        super().__init__()
        self.model = model

    def query(self, points) -> FieldQuery:
        pts, _ = as_query_points(points, self.model.latent.dim)
        return loggpis_distance(self.model, pts)


class RectangleField(DistanceField):
    name = "rect"

    def __init__(self, width: float, height: float):
        super().__init__()
        self.width = width
        self.height = height

    def query(self, points) -> FieldQuery:
        pts, _ = as_query_points(points, 2)
        return plain_query(rect_distance(self.width, self.height, pts), 2)
