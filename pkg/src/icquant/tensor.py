"""Matrix-level quantized tensor built from independently quantized rows."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from icquant.bounds import auto_gap_width
from icquant.errors import ValidationError
from icquant.gapcodec import DEFAULT_BLOCK_SIZE, GapCode
from icquant.partition import check_finite, outlier_count
from icquant.quantizers import QuantizedRow, dequantize_row, quantize_row, storage_breakdown


@dataclass(frozen=True)
class QuantizedTensor:
    d_out: int
    d_in: int
    scheme: str
    bits: int
    gamma: float
    gap_width: int
    mode: str
    block_size: int
    rows: tuple[QuantizedRow, ...]
    gaps: tuple[GapCode, ...]

    @property
    def outlier_count(self) -> int:
        return outlier_count(self.gamma, self.d_in)

    def validate(self) -> None:
        """Raise ValidationError unless every row agrees with the header fields."""
        if len(self.rows) != self.d_out or len(self.gaps) != self.d_out:
            raise ValidationError("row count does not match d_out")
        p = self.outlier_count
        for i, (q, g) in enumerate(zip(self.rows, self.gaps)):
            if q.scheme != self.scheme or q.bits != self.bits:
                raise ValidationError(f"row {i}: scheme/bits differ from tensor header")
            if q.row_length != self.d_in or g.row_length != self.d_in:
                raise ValidationError(f"row {i}: length differs from d_in")
            if q.outlier_count != p:
                raise ValidationError(f"row {i}: {q.outlier_count} outliers, expected {p}")
            if g.bit_width != self.gap_width or g.mode != self.mode:
                raise ValidationError(f"row {i}: gap code width/mode differs from header")
            if self.mode == "blockwise" and g.block_size != self.block_size:
                raise ValidationError(f"row {i}: block size differs from header")

    def storage(self) -> dict:
        """Bits/weight breakdown summed over rows."""
        parts = [storage_breakdown(q, g) for q, g in zip(self.rows, self.gaps)]
        n = self.d_out * self.d_in
        code = sum(s.code_bits for s in parts)
        index = sum(s.index_bits for s in parts)
        book = sum(s.codebook_bits for s in parts)
        return {
            "code_bits_per_weight": code / n,
            "index_bits_per_weight": index / n,
            "codebook_bits_per_weight": book / n,
            "total_bits_per_weight": (code + index + book) / n,
        }

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, QuantizedTensor):
            return NotImplemented
        head = ("d_out", "d_in", "scheme", "bits", "gamma", "gap_width", "mode", "block_size")
        if any(getattr(self, a) != getattr(other, a) for a in head):
            return False
        return self.gaps == other.gaps and all(_rows_equal(a, b) for a, b in zip(self.rows, other.rows))


def _rows_equal(a: QuantizedRow, b: QuantizedRow) -> bool:
    def same(x, y):
        if x is None or y is None:
            return x is None and y is None
        return np.array_equal(x, y)

    return (
        a.scheme == b.scheme
        and a.bits == b.bits
        and a.inlier_codebook == b.inlier_codebook
        and a.outlier_codebook == b.outlier_codebook
        and a.negative_codebook == b.negative_codebook
        and a.positive_codebook == b.positive_codebook
        and same(a.inlier_codes, b.inlier_codes)
        and same(a.outlier_codes, b.outlier_codes)
        and same(a.outlier_signs, b.outlier_signs)
    )


def quantize_tensor(
    matrix,
    gamma: float,
    n: int,
    scheme: str = "rtn",
    weights=None,
    b: int | None = None,
    mode: str = "whole-row",
    block_size: int = DEFAULT_BLOCK_SIZE,
    workers: int = 1,
    **kmeans_opts,
) -> QuantizedTensor:
    """Quantize every row of a 2-D weight matrix with shared settings.

    Rows are independent; ``workers > 1`` fans them out over a thread pool
    without changing the result.
    """
    W = np.asarray(matrix, dtype=np.float64)
    if W.ndim != 2 or W.size == 0:
        raise ValidationError("matrix must be a nonempty 2-D array")
    check_finite(W, "matrix")
    if weights is not None:
        weights = np.asarray(weights, dtype=np.float64)
        if weights.shape != W.shape:
            raise ValidationError("sensitivity weights must have the matrix shape")
    if b is None:
        b = auto_gap_width(gamma) if gamma > 0 else 2
    if mode == "whole-row":
        block_size = 0

    def one(i):
        w = None if weights is None else weights[i]
        return quantize_row(W[i], gamma, n, scheme, w, b, mode, block_size or DEFAULT_BLOCK_SIZE, **kmeans_opts)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, range(W.shape[0])))
    else:
        results = [one(i) for i in range(W.shape[0])]
    rows, gaps = zip(*results)
    return QuantizedTensor(W.shape[0], W.shape[1], scheme, n, float(gamma), b, mode, block_size, rows, gaps)


def dequantize_tensor(t: QuantizedTensor) -> np.ndarray:
    """Dense float64 reconstruction, shape (d_out, d_in)."""
    return np.stack([dequantize_row(q, g, t.d_in) for q, g in zip(t.rows, t.gaps)])
