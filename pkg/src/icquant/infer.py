"""Reference matrix-vector products over quantized tensors.

All paths share one accumulation order: per row, one float64 accumulator
fed column by column from left to right (blocks in ascending order), so the
fused, bitmask and dense-oracle results are comparable bit for bit.
"""

from __future__ import annotations

import statistics
import time

import numpy as np

from icquant.container import to_bytes
from icquant.errors import ValidationError
from icquant.gapcodec import iter_block_positions
from icquant.tensor import QuantizedTensor, dequantize_tensor


def _check_x(t: QuantizedTensor, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.size != t.d_in:
        raise ValidationError(f"vector length {x.size} does not match d_in={t.d_in}")
    return x


def accumulate_columns(acc: np.ndarray, block: np.ndarray, x: np.ndarray) -> None:
    """acc += block @ x, summed strictly left to right over columns."""
    for j in range(block.shape[1]):
        acc += block[:, j] * x[j]


def dense_matvec(W: np.ndarray, x) -> np.ndarray:
    """Oracle: canonical-order product of a dense float64 matrix."""
    W = np.asarray(W, dtype=np.float64)
    acc = np.zeros(W.shape[0])
    accumulate_columns(acc, W, np.asarray(x, dtype=np.float64))
    return acc


def matvec_fused(t: QuantizedTensor, x) -> np.ndarray:
    """Decode each block's outlier positions on the fly and multiply.

    Whole-row tensors are treated as a single block spanning the row.
    """
    x = _check_x(t, x)
    block = t.block_size if t.mode == "blockwise" else t.d_in
    iters = [iter_block_positions(g) for g in t.gaps]
    in_off = np.zeros(t.d_out, dtype=np.int64)
    out_off = np.zeros(t.d_out, dtype=np.int64)
    acc = np.zeros(t.d_out)
    for start in range(0, t.d_in, block):
        width = min(block, t.d_in - start)
        tile = np.empty((t.d_out, width))
        for i, (q, it) in enumerate(zip(t.rows, iters)):
            _, pos = next(it)
            local = pos - start
            p = local.size
            mask = np.ones(width, dtype=bool)
            mask[local] = False
            tile[i, mask] = q.inlier_values(slice(in_off[i], in_off[i] + width - p))
            tile[i, local] = q.outlier_values(slice(out_off[i], out_off[i] + p))
            in_off[i] += width - p
            out_off[i] += p
        accumulate_columns(acc, tile, x[start : start + width])
    return acc


def outlier_bitmask(t: QuantizedTensor) -> np.ndarray:
    """Boolean (d_out, d_in) mask of outlier positions, decoded once."""
    mask = np.zeros((t.d_out, t.d_in), dtype=bool)
    for i, g in enumerate(t.gaps):
        for _, pos in iter_block_positions(g):
            mask[i, pos] = True
    return mask


def matvec_predecoded(t: QuantizedTensor, x, mask: np.ndarray | None = None) -> np.ndarray:
    """Multiply using a pre-decoded outlier bitmask."""
    x = _check_x(t, x)
    if mask is None:
        mask = outlier_bitmask(t)
    W = np.empty((t.d_out, t.d_in))
    for i, q in enumerate(t.rows):
        W[i, ~mask[i]] = q.inlier_values()
        W[i, mask[i]] = q.outlier_values()
    return dense_matvec(W, x)


def throughput_probe(t: QuantizedTensor, x, repetitions: int = 3) -> dict:
    """Wall-clock min/median per path plus memory footprint; informational only."""
    if repetitions < 1:
        raise ValidationError("repetitions must be at least 1")
    x = _check_x(t, x)
    paths = {
        "fused": lambda: matvec_fused(t, x),
        "predecoded": lambda: matvec_predecoded(t, x),
        "dense": lambda: dense_matvec(dequantize_tensor(t), x),
    }
    timings, outputs = {}, {}
    for name, fn in paths.items():
        samples = []
        for _ in range(repetitions):
            t0 = time.perf_counter()
            outputs[name] = fn()
            samples.append(time.perf_counter() - t0)
        timings[name] = {"min_s": min(samples), "median_s": statistics.median(samples)}
    ref = outputs["dense"]
    identical = all(np.array_equal(ref, y) for y in outputs.values())
    quant_bytes = len(to_bytes(t))
    fp16_bytes = 2 * t.d_out * t.d_in
    return {
        "timings": timings,
        "outputs_identical": identical,
        "quantized_bytes": quant_bytes,
        "fp16_bytes": fp16_bytes,
        "compression_ratio": fp16_bytes / quant_bytes,
    }
