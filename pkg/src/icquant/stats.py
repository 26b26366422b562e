"""Positional-uniformity testing and uniformity-enforcing column permutations."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gammainccinv

from icquant.errors import ValidationError
from icquant.partition import check_finite, outlier_count, top_magnitude_indices

MIN_EXPECTED = 5.0


@dataclass(frozen=True)
class ChiSquareReport:
    per_row_statistic: np.ndarray
    per_row_rejected: np.ndarray
    group_size: int
    significance: float
    df: int
    critical: float
    underpowered: bool

    @property
    def rejection_rate(self) -> float:
        return float(np.mean(self.per_row_rejected))


def chi2_critical(df: int, significance: float) -> float:
    """Upper critical value: Q(df/2, c/2) = significance, Q the regularized upper gamma."""
    return 2.0 * float(gammainccinv(df / 2.0, significance))


def chi_square_positions(positions, d_in: int, group_size: int = 256, significance: float = 0.05) -> ChiSquareReport:
    """Per-row goodness-of-fit test of outlier positions against uniform groups.

    ``positions`` is a sequence of 0-based index arrays (or a 2-D array, one
    row per weight row).  Columns past the last full group are ignored and
    the expected count is recomputed from the outliers that remain.
    """
    if not 0.0 < significance < 1.0:
        raise ValidationError("significance must lie in (0, 1)")
    groups = d_in // group_size
    if groups < 2:
        raise ValidationError("need at least two full groups for a chi-square test")
    retained = groups * group_size
    rows = [np.asarray(p, dtype=np.int64).ravel() for p in positions]
    row_id = np.repeat(np.arange(len(rows)), [r.size for r in rows])
    flat = np.concatenate(rows) if rows else np.zeros(0, dtype=np.int64)
    keep = flat < retained
    cells = row_id[keep] * groups + flat[keep] // group_size
    counts = np.bincount(cells, minlength=len(rows) * groups).reshape(len(rows), groups).astype(float)
    expected = counts.sum(axis=1) / groups
    safe = np.where(expected > 0, expected, 1.0)[:, None]
    stat = ((counts - expected[:, None]) ** 2 / safe).sum(axis=1)
    df = groups - 1
    crit = chi2_critical(df, significance)
    return ChiSquareReport(
        stat, stat > crit, group_size, significance, df, crit,
        underpowered=bool(np.any(expected < MIN_EXPECTED)),
    )


def chi_square_uniformity(matrix, gamma: float, group_size: int = 256, significance: float = 0.05) -> ChiSquareReport:
    """Select each row's top-gamma outliers by magnitude and test their positions."""
    W = np.asarray(matrix, dtype=np.float64)
    if W.ndim != 2:
        raise ValidationError("matrix must be 2-D")
    check_finite(W, "matrix")
    p = outlier_count(gamma, W.shape[1])
    return chi_square_positions(top_magnitude_indices(W, p), W.shape[1], group_size, significance)


@dataclass(frozen=True)
class PermutationRecord:
    """Column permutation ``perm`` (new column j = old column perm[j]).

    ``row_permutation`` is set for chained layers whose outputs feed a
    permuted next layer; None means outputs keep their order.
    """

    seed: int
    column_permutation: np.ndarray
    inverse: np.ndarray
    row_permutation: np.ndarray | None = None

    def permute_matrix(self, W: np.ndarray) -> np.ndarray:
        W = np.asarray(W)[:, self.column_permutation]
        return W if self.row_permutation is None else W[self.row_permutation]

    def permute_input(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x)[self.column_permutation]

    def restore_columns(self, W: np.ndarray) -> np.ndarray:
        return np.asarray(W)[:, self.inverse]


def _record(seed: int, perm: np.ndarray, rows: np.ndarray | None = None) -> PermutationRecord:
    inv = np.empty_like(perm)
    inv[perm] = np.arange(perm.size)
    return PermutationRecord(seed, perm, inv, rows)


def random_permute_columns(matrix, seed: int) -> tuple[np.ndarray, PermutationRecord]:
    """Shuffle columns uniformly at random: W P, with P^T applied to inputs."""
    W = np.asarray(matrix)
    perm = np.random.default_rng(seed).permutation(W.shape[1])
    rec = _record(seed, perm)
    return rec.permute_matrix(W), rec


def chain_permutations(layer_dims, seed: int) -> list[PermutationRecord]:
    """Permutations for a chain of linear layers applied in order.

    ``layer_dims`` lists (out_dim, in_dim) per layer, first layer first.
    Layer l gets a random input permutation; its rows are permuted by the
    next layer's input permutation so the composed map is unchanged.  The
    last layer keeps its output order.
    """
    dims = [tuple(int(v) for v in d) for d in layer_dims]
    for (out_a, _), (_, in_b) in zip(dims, dims[1:]):
        if out_a != in_b:
            raise ValidationError(f"layer output dim {out_a} does not match next input dim {in_b}")
    rng = np.random.default_rng(seed)
    perms = [rng.permutation(in_dim) for _, in_dim in dims]
    return [
        _record(seed, perms[i], perms[i + 1] if i + 1 < len(dims) else None)
        for i in range(len(dims))
    ]
