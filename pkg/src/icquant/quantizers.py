"""Scalar quantizers applied separately to the inlier and outlier groups of a row."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from icquant.bounds import auto_gap_width
from icquant.errors import CorruptionError, ValidationError
from icquant.gapcodec import DEFAULT_BLOCK_SIZE, GapCode, decode_gaps, encode_blockwise, encode_gaps, measured_overhead
from icquant.partition import check_finite, outlier_count, split_row

Scheme = Literal["rtn", "sk"]

# serialized codebook parameters are float32
PARAM_BITS = 32
KMEANS_COUNT_BITS = 8


def round_half_away(x: np.ndarray) -> np.ndarray:
    a = np.abs(x)
    f = np.floor(a)
    return np.sign(x) * (f + (a - f >= 0.5))


@dataclass(frozen=True)
class UniformCodebook:
    """Evenly spaced levels ``zero_point + c * scale`` for c in [0, 2**bits)."""

    bits: int
    scale: float
    zero_point: float

    storage_bits = 2 * PARAM_BITS

    def levels(self) -> np.ndarray:
        return self.dequantize(np.arange(1 << self.bits))

    def dequantize(self, codes: np.ndarray) -> np.ndarray:
        return np.float64(self.zero_point) + np.asarray(codes, dtype=np.float64) * np.float64(self.scale)


@dataclass(frozen=True)
class KMeansCodebook:
    """Ascending centroids; ``objective`` and ``history`` are fit diagnostics."""

    bits: int
    centroids: np.ndarray
    objective: float | None = field(default=None, compare=False)
    history: tuple[float, ...] = field(default=(), compare=False)

    @property
    def storage_bits(self) -> int:
        return KMEANS_COUNT_BITS + PARAM_BITS * int(self.centroids.size)

    def levels(self) -> np.ndarray:
        return self.centroids.astype(np.float64)

    def dequantize(self, codes: np.ndarray) -> np.ndarray:
        return self.levels()[np.asarray(codes, dtype=np.int64)]

    def assign(self, values: np.ndarray) -> np.ndarray:
        return nearest(np.asarray(values, dtype=np.float64), self.levels())

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, KMeansCodebook):
            return NotImplemented
        return self.bits == other.bits and np.array_equal(self.centroids, other.centroids)


def _f32(x: float) -> float:
    return float(np.float32(x))


def rtn_fit_quantize(values, n: int) -> tuple[UniformCodebook, np.ndarray]:
    """Min/max uniform n-bit quantization with half-away-from-zero rounding.

    Codes are chosen against the exact fitted grid; the returned codebook
    holds the float32-rounded parameters that get serialized.
    """
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size == 0:
        raise ValidationError("cannot fit a quantizer to an empty group")
    if not 1 <= n <= 8:
        raise ValidationError(f"bit count must lie in [1, 8], got {n}")
    lo, hi = float(v.min()), float(v.max())
    scale = (hi - lo) / ((1 << n) - 1)
    if scale == 0.0:
        return UniformCodebook(n, 0.0, _f32(lo)), np.zeros(v.size, dtype=np.int64)
    codes = np.clip(round_half_away((v - lo) / scale), 0, (1 << n) - 1).astype(np.int64)
    return UniformCodebook(n, _f32(scale), _f32(lo)), codes


def rtn_outlier_quantize(outlier_values, n: int):
    """Sign-separated RTN: one sign bit plus (n-1)-bit RTN per sign side.

    Returns:
        (negative codebook or None, positive codebook or None,
         sign array (True = negative), (n-1)-bit code array)
    """
    if n < 2:
        raise ValidationError("sign-separated outlier RTN needs n >= 2")
    v = np.asarray(outlier_values, dtype=np.float64).ravel()
    signs = v < 0
    codes = np.zeros(v.size, dtype=np.int64)
    books = []
    for side in (signs, ~signs):
        if side.any():
            cb, c = rtn_fit_quantize(v[side], n - 1)
            codes[side] = c
            books.append(cb)
        else:
            books.append(None)
    return books[0], books[1], signs, codes


def nearest(values: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """Index of the nearest of ascending ``centers``; ties go to the lower one."""
    if centers.size == 1:
        return np.zeros(values.size, dtype=np.int64)
    mids = (centers[:-1] + centers[1:]) / 2
    return np.searchsorted(mids, values, side="left").astype(np.int64)


def weighted_objective(values: np.ndarray, weights: np.ndarray, centers: np.ndarray) -> float:
    c = np.sort(centers)
    return float(np.sum(weights * (values - c[nearest(values, c)]) ** 2))


def _quantile_init(v: np.ndarray, w: np.ndarray, k: int) -> np.ndarray:
    order = np.argsort(v, kind="stable")
    cw = np.cumsum(w[order])
    targets = (np.arange(k) + 0.5) / k * cw[-1]
    return v[order][np.minimum(np.searchsorted(cw, targets), v.size - 1)]


def _plusplus_init(v: np.ndarray, w: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Greedy k-means++: each step keeps the best of a few D^2-sampled candidates."""
    trials = 2 + int(math.log(k)) if k > 1 else 1
    centers = [v[rng.choice(v.size, p=w / w.sum())]]
    d = w * (v - centers[0]) ** 2
    for _ in range(1, k):
        if d.sum() <= 0:
            break
        cand = v[rng.choice(v.size, size=trials, p=d / d.sum())]
        nd = np.minimum(d[None, :], w[None, :] * (v[None, :] - cand[:, None]) ** 2)
        j = int(np.argmin(nd.sum(axis=1)))
        centers.append(cand[j])
        d = nd[j]
    return np.array(centers)


def _transfer_refine(v: np.ndarray, w: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """Single-point transfers across adjacent cluster boundaries.

    Lloyd stops at any partition whose means are self-consistent; moving one
    boundary value to the neighbouring cluster can still lower the objective.
    Only strictly improving moves are taken, so the objective never rises.
    """
    order = np.argsort(v, kind="stable")
    s, sw = v[order], w[order]
    k = centers.size
    a = nearest(s, np.sort(centers))
    edges = [0] + [int(np.searchsorted(a, j)) for j in range(1, k)] + [s.size]
    cw = np.concatenate([[0.0], np.cumsum(sw)])
    cwv = np.concatenate([[0.0], np.cumsum(sw * s)])

    def cluster(lo, hi):
        mass = cw[hi] - cw[lo]
        return mass, (cwv[hi] - cwv[lo]) / mass if mass > 0 else 0.0

    eps = 1e-15 * float(np.sum(sw * s * s) + 1.0)
    changed = True
    while changed:
        changed = False
        for j in range(k - 1):
            while True:
                lo, mid, hi = edges[j], edges[j + 1], edges[j + 2]
                wa, ma = cluster(lo, mid)
                wb, mb = cluster(mid, hi)
                gain, step = -eps, 0
                if mid - lo > 1 and wa - sw[mid - 1] > 0:
                    x, u = s[mid - 1], sw[mid - 1]
                    delta = u * wb / (wb + u) * (x - mb) ** 2 - u * wa / (wa - u) * (x - ma) ** 2
                    if delta < gain:
                        gain, step = delta, -1
                if hi - mid > 1 and wb - sw[mid] > 0:
                    x, u = s[mid], sw[mid]
                    delta = u * wa / (wa + u) * (x - ma) ** 2 - u * wb / (wb - u) * (x - mb) ** 2
                    if delta < gain:
                        gain, step = delta, 1
                if step == 0:
                    break
                edges[j + 1] += step
                changed = True
    return np.array([cluster(edges[j], edges[j + 1])[1] for j in range(k)])


def _lloyd(v, w, centers, k, max_iters, tol):
    c = np.sort(centers.astype(np.float64))
    if c.size < k:
        c = np.concatenate([c, np.full(k - c.size, c[-1])])
    scale = max(float(np.abs(v).max()), np.finfo(float).tiny)
    history = [weighted_objective(v, w, c)]
    for _ in range(max_iters):
        assign = nearest(v, c)
        sw = np.bincount(assign, weights=w, minlength=k)
        swv = np.bincount(assign, weights=w * v, minlength=k)
        members = np.bincount(assign, minlength=k)
        new = np.where(sw > 0, swv / np.where(sw > 0, sw, 1.0), c)
        # empty clusters (including duplicate centers) re-seed at the worst-served value
        for j in np.flatnonzero(members == 0):
            s = np.sort(np.delete(new, j))
            err = w * (v - s[nearest(v, s)]) ** 2
            new[j] = v[int(np.argmax(err))]
        new = np.sort(new)
        history.append(weighted_objective(v, w, new))
        moved = float(np.max(np.abs(new - c)))
        c = new
        if moved < tol * scale:
            break
    return c, history


def weighted_kmeans_fit(
    values,
    weights=None,
    k: int = 4,
    max_iters: int = 100,
    tol: float = 1e-8,
    seed: int | None = None,
    restarts: int = 0,
) -> KMeansCodebook:
    """Sensitivity-weighted 1-D Lloyd clustering.

    Minimizes sum_i w_i (v_i - c(v_i))^2.  The first run starts from k evenly
    spaced weighted quantiles; ``restarts`` additional runs use seeded
    greedy k-means++ seeding and the lowest objective wins.  Each run ends
    with boundary transfers followed by another Lloyd pass.  If there are no
    more distinct values than k, the distinct values themselves are returned.

    Raises:
        ValidationError: length mismatch, negative weights, or all-zero weights.
    """
    v = np.asarray(values, dtype=np.float64).ravel()
    w = np.ones_like(v) if weights is None else np.asarray(weights, dtype=np.float64).ravel()
    if v.size == 0 or v.size != w.size:
        raise ValidationError("values and weights must be nonempty and equally long")
    if k < 1:
        raise ValidationError("k must be at least 1")
    check_finite(v, "values")
    check_finite(w, "weights")
    if np.any(w < 0) or not np.any(w > 0):
        raise ValidationError("weights must be nonnegative with at least one positive entry")
    bits = max(int(np.ceil(np.log2(k))), 0)

    distinct = np.unique(v)
    if distinct.size <= k:
        c = np.unique(distinct.astype(np.float32))
        return KMeansCodebook(bits, c, weighted_objective(v, w, c.astype(np.float64)), (0.0,))

    def run(init):
        c, hist = _lloyd(v, w, init, k, max_iters, tol)
        c, more = _lloyd(v, w, _transfer_refine(v, w, c), k, max_iters, tol)
        return c, hist + more

    best_c, best_hist = run(_quantile_init(v, w, k))
    rng = np.random.default_rng(seed)
    for _ in range(restarts):
        c, hist = run(_plusplus_init(v, w, k, rng))
        if hist[-1] < best_hist[-1]:
            best_c, best_hist = c, hist
    centroids = np.unique(best_c.astype(np.float32))
    return KMeansCodebook(bits, centroids, weighted_objective(v, w, centroids.astype(np.float64)), tuple(best_hist))


@dataclass(frozen=True)
class QuantizedRow:
    """Codes and codebooks for one row; outlier positions live in the GapCode.

    RTN rows carry a sign-split pair of (n-1)-bit codebooks and a sign per
    outlier (True = negative); SK rows carry one n-bit k-means codebook for
    all outliers.
    """

    scheme: Scheme
    bits: int
    inlier_codebook: UniformCodebook | KMeansCodebook
    inlier_codes: np.ndarray
    outlier_codes: np.ndarray
    outlier_codebook: KMeansCodebook | None = None
    negative_codebook: UniformCodebook | None = None
    positive_codebook: UniformCodebook | None = None
    outlier_signs: np.ndarray | None = None

    @property
    def outlier_count(self) -> int:
        return int(self.outlier_codes.size)

    @property
    def row_length(self) -> int:
        return int(self.inlier_codes.size + self.outlier_codes.size)

    def inlier_values(self, sl: slice = slice(None)) -> np.ndarray:
        return self.inlier_codebook.dequantize(self.inlier_codes[sl])

    def outlier_values(self, sl: slice = slice(None)) -> np.ndarray:
        codes = self.outlier_codes[sl]
        if codes.size == 0:
            return np.zeros(0)
        if self.scheme == "sk":
            return self.outlier_codebook.dequantize(codes)
        out = np.empty(codes.size)
        neg = self.outlier_signs[sl]
        if neg.any():
            out[neg] = self.negative_codebook.dequantize(codes[neg])
        if (~neg).any():
            out[~neg] = self.positive_codebook.dequantize(codes[~neg])
        return out

    @property
    def codebook_bits(self) -> int:
        total = self.inlier_codebook.storage_bits
        if self.outlier_count:
            if self.scheme == "sk":
                total += self.outlier_codebook.storage_bits
            else:
                # both sign sides are always serialized
                total += 2 * UniformCodebook.storage_bits
        return total

    @property
    def code_bits(self) -> int:
        return self.bits * self.row_length


@dataclass(frozen=True)
class StorageBreakdown:
    row_length: int
    code_bits: int
    index_bits: int
    codebook_bits: int

    @property
    def total_bits(self) -> int:
        return self.code_bits + self.index_bits + self.codebook_bits

    def per_weight(self) -> dict:
        n = self.row_length
        return {
            "code": self.code_bits / n,
            "index": self.index_bits / n,
            "codebook": self.codebook_bits / n,
            "total": self.total_bits / n,
        }


def storage_breakdown(q: QuantizedRow, gaps: GapCode) -> StorageBreakdown:
    """bits/weight = n + index overhead + codebook bits / row length."""
    index_bits = round(measured_overhead(gaps) * gaps.row_length)
    return StorageBreakdown(q.row_length, q.code_bits, index_bits, q.codebook_bits)


def _fit_group(values, weights, n, scheme, kmeans_opts):
    if scheme == "rtn":
        return rtn_fit_quantize(values, n)
    cb = weighted_kmeans_fit(values, weights, 1 << n, **kmeans_opts)
    return cb, cb.assign(values)


def quantize_row(
    row,
    gamma: float,
    n: int,
    scheme: Scheme = "rtn",
    weights=None,
    b: int | None = None,
    mode: str = "whole-row",
    block_size: int = DEFAULT_BLOCK_SIZE,
    **kmeans_opts,
) -> tuple[QuantizedRow, GapCode]:
    """Partition ``row`` and quantize inliers and outliers independently with n bits.

    ``b`` defaults to the width minimizing the uniform-placement bound for
    ``gamma``.  ``gamma=0`` gives plain single-codebook quantization.
    """
    row = np.asarray(row, dtype=np.float64).ravel()
    if row.size == 0:
        raise ValidationError("row must be nonempty")
    check_finite(row)
    if not 0.0 <= gamma <= 0.5:
        raise ValidationError(f"gamma must lie in [0, 0.5], got {gamma}")
    if scheme not in ("rtn", "sk"):
        raise ValidationError(f"unknown scheme {scheme!r}")
    if weights is not None:
        weights = np.asarray(weights, dtype=np.float64).ravel()
        if weights.size != row.size:
            raise ValidationError("weights must match the row length")
    if b is None:
        b = auto_gap_width(gamma) if gamma > 0 else 2

    part = split_row(row, outlier_count(gamma, row.size), gamma)
    mask = part.inlier_mask()
    w_in = None if weights is None else weights[mask]
    w_out = None if weights is None else weights[~mask]

    # gamma <= 0.5 keeps at least one inlier
    in_cb, in_codes = _fit_group(part.inlier_values, w_in, n, scheme, kmeans_opts)

    p = part.outlier_count
    extra = {}
    if p == 0:
        out_codes = np.zeros(0, dtype=np.int64)
    elif scheme == "rtn":
        neg, pos, signs, out_codes = rtn_outlier_quantize(part.outlier_values, n)
        extra = dict(negative_codebook=neg, positive_codebook=pos, outlier_signs=signs)
    else:
        out_cb, out_codes = _fit_group(part.outlier_values, w_out, n, scheme, kmeans_opts)
        extra = dict(outlier_codebook=out_cb)

    q = QuantizedRow(scheme, n, in_cb, in_codes, out_codes, **extra)
    if mode == "blockwise":
        gaps = encode_blockwise(part.outlier_indices, row.size, b, block_size)
    elif mode == "whole-row":
        gaps = encode_gaps(part.outlier_indices, row.size, b)
    else:
        raise ValidationError(f"unknown gap mode {mode!r}")
    return q, gaps


def dequantize_row(q: QuantizedRow, gaps: GapCode, row_length: int | None = None) -> np.ndarray:
    """Rebuild a dense float64 row from codes, codebooks and the gap code."""
    n = gaps.row_length if row_length is None else row_length
    if q.row_length != n or gaps.row_length != n:
        raise CorruptionError(f"code counts ({q.row_length}) do not match row length {n}")
    pos = decode_gaps(gaps, q.outlier_count)
    out = np.empty(n, dtype=np.float64)
    mask = np.ones(n, dtype=bool)
    mask[pos] = False
    out[mask] = q.inlier_values()
    out[pos] = q.outlier_values()
    return out


@dataclass(frozen=True)
class GroupedRTN:
    group_size: int
    codebooks: tuple[UniformCodebook, ...]
    codes: np.ndarray

    def dequantize(self) -> np.ndarray:
        parts = [
            cb.dequantize(self.codes[i * self.group_size : (i + 1) * self.group_size])
            for i, cb in enumerate(self.codebooks)
        ]
        return np.concatenate(parts)

    @property
    def bits_per_weight(self) -> float:
        n = self.codebooks[0].bits
        return n + len(self.codebooks) * UniformCodebook.storage_bits / self.codes.size


def grouped_rtn_baseline(row, n: int, group_size: int) -> GroupedRTN:
    """Independent RTN per contiguous group of ``group_size`` weights."""
    row = np.asarray(row, dtype=np.float64).ravel()
    if group_size < 2:
        raise ValidationError("group_size must be at least 2")
    books, codes = [], []
    for start in range(0, row.size, group_size):
        cb, c = rtn_fit_quantize(row[start : start + group_size], n)
        books.append(cb)
        codes.append(c)
    return GroupedRTN(group_size, tuple(books), np.concatenate(codes))
