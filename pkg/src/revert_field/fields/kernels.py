"""
Stationary isotropic covariance kernels, their reverting (inverse) functions
and their derivatives with respect to distance.

All kernels are unscaled, kappa(0) = 1, and strictly decreasing in d.
Evaluation goes through log space so that underflow far from the data turns
into an exact 0, which reverting reports as field-not-positive.
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import Union

import numpy as np
from scipy.optimize.elementwise import find_root

from ..config_manager import get_default_rq_alpha
from ..core.exceptions import FieldNotPositiveError, InvalidArgumentError

ArrayLike = Union[float, np.ndarray]

SQRT3 = np.sqrt(3.0)
MATERN_BRACKET_START = 5.0  # in lengthscales
REVERTING_XRTOL = 1e-10
REVERTING_XATOL = 1e-12  # in lengthscales


class KernelKind(str, Enum):
    SQUARED_EXPONENTIAL = "se"
    RATIONAL_QUADRATIC = "rq"
    MATERN32 = "matern"


@dataclass(frozen=True)
class KernelModel:
    kind: KernelKind
    lengthscale: float
    rq_alpha: float = field(default_factory=get_default_rq_alpha)

    def __post_init__(self):
        object.__setattr__(self, "kind", KernelKind(self.kind))
        if not np.isfinite(self.lengthscale) or self.lengthscale <= 0:
            raise InvalidArgumentError(f"lengthscale must be finite and > 0, got {self.lengthscale}")
        if not np.isfinite(self.rq_alpha) or self.rq_alpha <= 0:
            raise InvalidArgumentError(f"rq_alpha must be finite and > 0, got {self.rq_alpha}")

    @classmethod
    def from_config(cls, config) -> "KernelModel":
        return cls(kind=KernelKind(config.kind), lengthscale=config.lengthscale, rq_alpha=config.rq_alpha)

    def with_kind(self, kind) -> "KernelModel":
        return KernelModel(kind=KernelKind(kind), lengthscale=self.lengthscale, rq_alpha=self.rq_alpha)

    def __call__(self, d: ArrayLike) -> ArrayLike:
        return kernel_eval(self, d)


def _check_distance(d) -> np.ndarray:
    d = np.asarray(d, dtype=float)
    if not np.all(np.isfinite(d)) or np.any(d < 0):
        raise InvalidArgumentError(f"distance must be finite and >= 0, got {d}")
    return d


def _output(values: np.ndarray, like) -> ArrayLike:
    return float(values) if np.ndim(like) == 0 else values


def log_kernel_eval(k: KernelModel, d: ArrayLike) -> ArrayLike:
    """log kappa(d), finite for every finite d."""
    dd = _check_distance(d)
    l = k.lengthscale
    if k.kind is KernelKind.SQUARED_EXPONENTIAL:
        out = -0.5 * (dd / l) ** 2
    elif k.kind is KernelKind.RATIONAL_QUADRATIC:
        out = -k.rq_alpha * np.log1p(dd ** 2 / (2.0 * k.rq_alpha * l ** 2))
    else:
        u = SQRT3 * dd / l
        out = np.log1p(u) - u
    return _output(out, d)


def kernel_eval(k: KernelModel, d: ArrayLike) -> ArrayLike:
    return _output(np.exp(np.asarray(log_kernel_eval(k, d))), d)


def _derivative_over_distance(k: KernelModel, d: np.ndarray) -> np.ndarray:
    """kappa'(d) / d, finite at d = 0."""
    l = k.lengthscale
    if k.kind is KernelKind.SQUARED_EXPONENTIAL:
        return -np.exp(-0.5 * (d / l) ** 2) / l ** 2
    if k.kind is KernelKind.RATIONAL_QUADRATIC:
        base = np.log1p(d ** 2 / (2.0 * k.rq_alpha * l ** 2))
        return -np.exp(-(k.rq_alpha + 1.0) * base) / l ** 2
    return -3.0 * np.exp(-SQRT3 * d / l) / l ** 2


def kernel_derivative(k: KernelModel, d: ArrayLike) -> ArrayLike:
    """d kappa / d d, analytic."""
    dd = _check_distance(d)
    return _output(_derivative_over_distance(k, dd) * dd, d)


def kernel_gradient(k: KernelModel, diff: np.ndarray) -> np.ndarray:
    """Gradient of kappa(||x - x'||) with respect to x, given diff = x - x' (..., dim)."""
    diff = np.asarray(diff, dtype=float)
    d = np.linalg.norm(diff, axis=-1)
    return _derivative_over_distance(k, d)[..., None] * diff


def gradient_prior_variance(k: KernelModel) -> float:
    """-kappa''(0): prior variance of each component of the latent gradient."""
    l2 = k.lengthscale ** 2
    if k.kind is KernelKind.MATERN32:
        return 3.0 / l2
    return 1.0 / l2


def _check_latent(o) -> np.ndarray:
    o = np.asarray(o, dtype=float)
    if np.any(np.isnan(o)):
        raise InvalidArgumentError(f"latent value must not be NaN, got {o}")
    if np.any(o <= 0):
        raise FieldNotPositiveError(float(np.min(o)))
    if np.any(o > 1):
        raise InvalidArgumentError(f"latent value must be capped to 1 before reverting, got {float(np.max(o))}")
    return o


def _matern_reverting(k: KernelModel, o: np.ndarray) -> np.ndarray:
    out = np.zeros_like(o)
    todo = o < 1.0
    if not np.any(todo):
        return out
    log_o = np.log(o[todo])
    l = k.lengthscale

    def residual(d, target):
        u = SQRT3 * d / l
        return np.log1p(u) - u - target

    # kappa is monotone: double the upper bracket until it straddles the root
    upper = np.full_like(log_o, MATERN_BRACKET_START * l)
    while True:
        short = residual(upper, log_o) >= 0
        if not np.any(short):
            break
        upper[short] *= 2.0
    res = find_root(residual, (np.zeros_like(log_o), upper), args=(log_o,),
                    tolerances=dict(xrtol=REVERTING_XRTOL, xatol=REVERTING_XATOL * l))
    out[todo] = res.x
    return out


def reverting(k: KernelModel, o: ArrayLike) -> ArrayLike:
    """Distance d such that kappa(d) = o, for o in (0, 1]; reverting(1) = 0."""
    oo = _check_latent(o)
    l = k.lengthscale
    if k.kind is KernelKind.SQUARED_EXPONENTIAL:
        out = np.sqrt(-2.0 * l ** 2 * np.log(oo))
    elif k.kind is KernelKind.RATIONAL_QUADRATIC:
        out = np.sqrt(2.0 * k.rq_alpha * l ** 2 * np.expm1(-np.log(oo) / k.rq_alpha))
    else:
        out = _matern_reverting(k, np.atleast_1d(oo)).reshape(oo.shape)
    # -0.0 from log(1)
    out = np.abs(out)
    return _output(out, o)
