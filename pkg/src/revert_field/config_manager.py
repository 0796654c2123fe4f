"""
Manages library-wide defaults shared by several modules: the kernel used when
none is named, the rational-quadratic shape alpha and the smooth-minimum
sharpness lambda.

Both numeric defaults are high enough for accuracy but keep clear of machine
precision over metre-scale workspaces.
"""

import math

_DEFAULT_KERNEL_KIND = "rq"
_DEFAULT_RQ_ALPHA = 100.0
_DEFAULT_SMOOTH_MIN_LAMBDA = -50.0

SUPPORTED_KERNEL_KINDS = ("se", "rq", "matern")


def get_default_kernel_kind() -> str:
    """Returns the kernel kind used when a configuration names none."""
    return _DEFAULT_KERNEL_KIND


def set_default_kernel_kind(kind: str) -> None:
    """Sets the default kernel kind."""
    global _DEFAULT_KERNEL_KIND
    if kind not in SUPPORTED_KERNEL_KINDS:
        raise ValueError(f"Kernel kind must be one of {list(SUPPORTED_KERNEL_KINDS)}, got {kind!r}.")
    _DEFAULT_KERNEL_KIND = kind


def get_default_rq_alpha() -> float:
    """Returns the current default rational-quadratic shape parameter."""
    return _DEFAULT_RQ_ALPHA


def set_default_rq_alpha(alpha: float) -> None:
    """Sets the default rational-quadratic shape parameter."""
    global _DEFAULT_RQ_ALPHA
    if isinstance(alpha, bool) or not isinstance(alpha, (int, float)) or not math.isfinite(alpha) or alpha <= 0:
        raise ValueError("RQ alpha must be a finite number > 0.")
    _DEFAULT_RQ_ALPHA = float(alpha)


def get_default_smooth_min_lambda() -> float:
    """Returns the current default smooth-minimum sharpness."""
    return _DEFAULT_SMOOTH_MIN_LAMBDA


def set_default_smooth_min_lambda(lam: float) -> None:
    """Sets the default smooth-minimum sharpness (must be negative)."""
    global _DEFAULT_SMOOTH_MIN_LAMBDA
    if isinstance(lam, bool) or not isinstance(lam, (int, float)) or not math.isfinite(lam) or lam >= 0:
        raise ValueError("Smooth-min lambda must be a finite number < 0.")
    _DEFAULT_SMOOTH_MIN_LAMBDA = float(lam)
