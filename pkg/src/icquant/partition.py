"""Per-row outlier selection and range statistics."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from icquant.errors import ValidationError


@dataclass(frozen=True)
class RowPartition:
    """Split of one row into top-magnitude outliers and the remaining inliers.

    ``outlier_indices`` are 0-based and strictly increasing; ``outlier_values``
    and ``inlier_values`` are listed in position order.
    """

    gamma: float
    row_length: int
    outlier_indices: np.ndarray
    outlier_values: np.ndarray
    inlier_values: np.ndarray

    @property
    def outlier_count(self) -> int:
        return int(self.outlier_indices.size)

    def inlier_mask(self) -> np.ndarray:
        mask = np.ones(self.row_length, dtype=bool)
        mask[self.outlier_indices] = False
        return mask

    def reassemble(self) -> np.ndarray:
        out = np.empty(self.row_length, dtype=self.inlier_values.dtype)
        mask = self.inlier_mask()
        out[mask] = self.inlier_values
        out[~mask] = self.outlier_values
        return out


@dataclass(frozen=True)
class RangeReport:
    total_range: float
    inlier_range: float
    outlier_range: float
    normalized_inlier_range: float


def outlier_count(gamma: float, row_length: int) -> int:
    """Number of outliers for a row: floor(gamma * row_length)."""
    return math.floor(gamma * row_length)


def check_finite(values: np.ndarray, what: str = "row") -> None:
    if not np.all(np.isfinite(values)):
        bad = int(np.flatnonzero(~np.isfinite(values))[0])
        raise ValidationError(f"{what} contains a non-finite value at flat index {bad}")


def top_magnitude_indices(values: np.ndarray, p: int) -> np.ndarray:
    """Sorted 0-based positions of the ``p`` largest-|v| entries along the last axis.

    Ties at the threshold go to the smaller index (stable sort on -|v|).
    """
    order = np.argsort(-np.abs(values), axis=-1, kind="stable")
    return np.sort(order[..., :p], axis=-1)


def split_row(row: np.ndarray, p: int, gamma: float = 0.0) -> RowPartition:
    idx = top_magnitude_indices(row, p)
    mask = np.ones(row.size, dtype=bool)
    mask[idx] = False
    return RowPartition(gamma, row.size, idx, row[idx], row[mask])


def partition_row(row, gamma: float) -> RowPartition:
    """Select the top floor(gamma*len) entries of ``row`` by magnitude as outliers.

    Raises:
        ValidationError: empty or non-finite row, or gamma outside (0, 0.5].
    """
    row = np.asarray(row, dtype=np.float64)
    if row.ndim != 1 or row.size == 0:
        raise ValidationError("row must be a nonempty 1-D array")
    check_finite(row)
    if not 0.0 < gamma <= 0.5:
        raise ValidationError(f"gamma must lie in (0, 0.5], got {gamma}")
    return split_row(row, outlier_count(gamma, row.size), gamma)


def _span(v: np.ndarray) -> float:
    return float(v.max() - v.min()) if v.size else 0.0


def range_report(partition: RowPartition, row) -> RangeReport:
    """Total, inlier and outlier ranges of a partitioned row.

    The inlier range is normalized by the full row range; a constant row
    reports a normalized range of 0.
    """
    row = np.asarray(row, dtype=np.float64)
    total = _span(row)
    inlier = _span(partition.inlier_values)
    outlier = _span(partition.outlier_values)
    normalized = inlier / total if total > 0 else 0.0
    return RangeReport(total, inlier, outlier, normalized)


def normalized_inlier_ranges(matrix: np.ndarray, gamma: float) -> np.ndarray:
    """Vectorized normalized inlier range for every row of ``matrix``."""
    matrix = np.asarray(matrix, dtype=np.float64)
    p = outlier_count(gamma, matrix.shape[1])
    total = matrix.max(axis=1) - matrix.min(axis=1)
    if p == 0:
        return np.where(total > 0, 1.0, 0.0)
    if p == matrix.shape[1]:
        return np.zeros(matrix.shape[0])
    order = np.argsort(-np.abs(matrix), axis=1, kind="stable")
    inliers = np.take_along_axis(matrix, order[:, p:], axis=1)
    span = inliers.max(axis=1) - inliers.min(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(total > 0, span / total, 0.0)
