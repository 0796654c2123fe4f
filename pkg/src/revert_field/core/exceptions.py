"""
Exception types raised by revert_field.

Query-level failures of distance fields are reported through FieldStatus,
not through these exceptions.
"""


class RevertFieldError(Exception):
    """Base class for all library errors."""


class InvalidArgumentError(RevertFieldError, ValueError):
    pass


class FieldNotPositiveError(RevertFieldError, ValueError):
    """Raised when reverting a latent value that is not strictly positive."""

    def __init__(self, value):
        self.value = value
        super().__init__(f"field-not-positive: latent value {value!r} is not > 0")


class GramNotPositiveDefiniteError(RevertFieldError, ArithmeticError):
    def __init__(self, jitter):
        self.jitter = jitter
        super().__init__(f"gram-not-pd: Cholesky failed with final jitter {jitter:.3e}")


class CalibrationError(RevertFieldError, RuntimeError):
    pass


class EmptyMeasurementError(RevertFieldError, ValueError):
    def __init__(self, message="empty-measurement: measurement has zero energy"):
        super().__init__(message)


class NoEchoError(RevertFieldError, LookupError):
    def __init__(self, threshold, prominence):
        self.threshold = threshold
        self.prominence = prominence
        super().__init__(
            f"no-echo: no envelope peak with value >= {threshold} and prominence >= {prominence}")


class ConfigError(RevertFieldError, ValueError):
    pass
