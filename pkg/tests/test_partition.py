import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from icquant import ValidationError, partition_row, range_report
from icquant.partition import normalized_inlier_ranges


def test_small_row():
    part = partition_row([0.1, -5.0, 0.2, 4.0], 0.5)
    assert part.outlier_count == 2
    assert part.outlier_indices.tolist() == [1, 3]
    assert part.outlier_values.tolist() == [-5.0, 4.0]
    assert part.inlier_values.tolist() == [0.1, 0.2]


def test_floor_gives_zero_outliers():
    part = partition_row(np.arange(100.0), 0.005)
    assert part.outlier_count == 0
    assert part.inlier_values.size == 100


def test_ties_prefer_smaller_index():
    part = partition_row([1.0, -1.0, 1.0, 0.5], 0.25)
    assert part.outlier_indices.tolist() == [0]


@pytest.mark.parametrize("gamma", [0.0, -0.1, 0.51, 1.0])
def test_gamma_out_of_range(gamma):
    with pytest.raises(ValidationError):
        partition_row([1.0, 2.0], gamma)


@pytest.mark.parametrize("bad", [np.nan, np.inf, -np.inf])
def test_non_finite_rejected(bad):
    with pytest.raises(ValidationError, match="non-finite"):
        partition_row([1.0, bad, 2.0], 0.5)


def test_gaussian_threshold_near_1_96():
    # sort-by-magnitude oracle: the (n-p)-th smallest |v| is the threshold
    for seed in range(100):
        row = np.random.default_rng(seed).standard_normal(4096)
        part = partition_row(row, 0.05)
        oracle = np.sort(np.abs(row))[-part.outlier_count]
        assert np.min(np.abs(part.outlier_values)) == oracle
        assert abs(oracle - 1.96) < 0.1


def test_range_report_symmetric():
    row = np.array([-1.0, -0.5, 0.5, 1.0])
    rep = range_report(partition_row(row, 0.5), row)
    assert rep.total_range == 2.0
    assert rep.inlier_range == 1.0
    assert rep.normalized_inlier_range == 0.5


def test_gaussian_range_near_half():
    vals = []
    for seed in range(100):
        row = np.random.default_rng(seed).standard_normal(4096)
        vals.append(range_report(partition_row(row, 0.05), row).normalized_inlier_range)
    assert abs(np.mean(vals) - 0.53) <= 0.05


def test_heavy_tail_range_below_half():
    rows = np.random.default_rng(0).standard_t(5, size=(100, 4096))
    assert normalized_inlier_ranges(rows, 0.05).mean() < 0.5


def test_vectorized_ranges_match_rowwise(rng):
    W = rng.standard_normal((20, 300))
    expected = [range_report(partition_row(r, 0.07), r).normalized_inlier_range for r in W]
    np.testing.assert_allclose(normalized_inlier_ranges(W, 0.07), expected)


rows = arrays(np.float64, st.integers(1, 200), elements=st.floats(-1e6, 1e6, allow_nan=False))


@given(rows, st.floats(0.001, 0.5))
@settings(max_examples=200, deadline=None)
def test_partition_properties(row, gamma):
    part = partition_row(row, gamma)
    p = int(np.floor(gamma * row.size))
    assert part.outlier_count == p
    assert np.all(np.diff(part.outlier_indices) > 0)
    # multiset of outliers equals the last p of a magnitude sort
    by_mag = np.sort(np.abs(row))
    assert sorted(np.abs(part.outlier_values)) == sorted(by_mag[row.size - p :])
    if p and part.inlier_values.size:
        assert np.abs(part.outlier_values).min() >= np.abs(part.inlier_values).max()
    np.testing.assert_array_equal(part.reassemble(), row)
    again = partition_row(row, gamma)
    np.testing.assert_array_equal(again.outlier_indices, part.outlier_indices)
