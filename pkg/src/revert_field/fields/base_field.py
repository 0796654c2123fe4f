from abc import ABC, abstractmethod
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np

from ..core.exceptions import InvalidArgumentError
from ..utils.logger import logger


class FieldStatus(str, Enum):
    OK = "ok"
    CAPPED = "capped"
    NOT_POSITIVE = "nopos"


STATUS_CODES = {FieldStatus.OK: 0, FieldStatus.CAPPED: 1, FieldStatus.NOT_POSITIVE: 2}
STATUS_BY_CODE = {code: status for status, code in STATUS_CODES.items()}


@dataclass(frozen=True)
class FieldPoint:
    """Result of one distance query."""
    d_hat: float
    o_hat: float
    grad: np.ndarray
    uncertainty: float
    status: FieldStatus


@dataclass(frozen=True)
class FieldQuery:
    """
    Batched distance query results, one row per query point.

    d_hat and uncertainty are NaN where status is NOT_POSITIVE; o_hat is the raw
    (uncapped) latent value, NaN for fields without a latent value.
    """
    d_hat: np.ndarray
    o_hat: np.ndarray
    grad: np.ndarray
    uncertainty: np.ndarray
    status_codes: np.ndarray
    grad_cov: Optional[np.ndarray] = None

    def __len__(self):
        return len(self.d_hat)

    @property
    def valid(self) -> np.ndarray:
        return self.status_codes != STATUS_CODES[FieldStatus.NOT_POSITIVE]

    @property
    def statuses(self):
        return [STATUS_BY_CODE[int(c)] for c in self.status_codes]

    def point(self, i: int) -> FieldPoint:
        return FieldPoint(
            d_hat=float(self.d_hat[i]),
            o_hat=float(self.o_hat[i]),
            grad=self.grad[i],
            uncertainty=float(self.uncertainty[i]),
            status=STATUS_BY_CODE[int(self.status_codes[i])],
        )

    def subset(self, mask) -> "FieldQuery":
        return FieldQuery(
            d_hat=self.d_hat[mask],
            o_hat=self.o_hat[mask],
            grad=self.grad[mask],
            uncertainty=self.uncertainty[mask],
            status_codes=self.status_codes[mask],
            grad_cov=None if self.grad_cov is None else self.grad_cov[mask],
        )


def as_query_points(x, dim: Optional[int] = None):
    """(M, dim) float array and whether the input was a single point."""
    pts = np.asarray(x, dtype=float)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    if pts.ndim != 2 or not np.all(np.isfinite(pts)):
        raise InvalidArgumentError(f"query points must be a finite (M, dim) array, got shape {pts.shape}")
    if dim is not None and pts.shape[1] != dim:
        raise InvalidArgumentError(f"query dimension {pts.shape[1]} does not match field dimension {dim}")
    return pts, single


def plain_query(d_hat: np.ndarray, dim: int) -> FieldQuery:
    """FieldQuery for fields that only produce distances."""
    d_hat = np.asarray(d_hat, dtype=float)
    nan = np.full(d_hat.shape, np.nan)
    return FieldQuery(
        d_hat=d_hat,
        o_hat=nan,
        grad=np.full(d_hat.shape + (dim,), np.nan),
        uncertainty=nan.copy(),
        status_codes=np.zeros(d_hat.shape, dtype=np.uint8),
    )


class DistanceField(ABC):
    """A queryable unsigned distance field."""

    name = "field"

    def __init__(self):
        self.logger = logger

    @abstractmethod
    def query(self, points) -> FieldQuery:
        pass

    def distance(self, points) -> np.ndarray:
        """Distances, NaN where the field fails."""
        pts, _ = as_query_points(points)
        return self.query(pts).d_hat

    def set_logger(self, logger):
        self.logger = logger
