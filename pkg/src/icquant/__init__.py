"""Outlier-aware weight quantization with gap-coded outlier indices."""

from icquant.errors import CorruptionError, ICQuantError, ParseError, ValidationError
from icquant.partition import RangeReport, RowPartition, partition_row, range_report
from icquant.gapcodec import GapCode, decode_gaps, encode_blockwise, encode_gaps, measured_overhead
from icquant.bounds import lemma1_bound, lemma2_bound, simulate_overhead, worst_case_indices
from icquant.quantizers import (
    KMeansCodebook,
    QuantizedRow,
    UniformCodebook,
    dequantize_row,
    grouped_rtn_baseline,
    quantize_row,
    rtn_fit_quantize,
    rtn_outlier_quantize,
    weighted_kmeans_fit,
)
from icquant.tensor import QuantizedTensor, dequantize_tensor, quantize_tensor

__version__ = "0.1.0"

__all__ = [
    "CorruptionError",
    "GapCode",
    "ICQuantError",
    "KMeansCodebook",
    "ParseError",
    "QuantizedRow",
    "QuantizedTensor",
    "RangeReport",
    "RowPartition",
    "UniformCodebook",
    "ValidationError",
    "decode_gaps",
    "dequantize_row",
    "dequantize_tensor",
    "encode_blockwise",
    "encode_gaps",
    "grouped_rtn_baseline",
    "lemma1_bound",
    "lemma2_bound",
    "measured_overhead",
    "partition_row",
    "quantize_row",
    "quantize_tensor",
    "range_report",
    "rtn_fit_quantize",
    "rtn_outlier_quantize",
    "simulate_overhead",
    "weighted_kmeans_fit",
    "worst_case_indices",
]
