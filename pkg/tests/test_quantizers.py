import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from icquant import (
    CorruptionError,
    ValidationError,
    dequantize_row,
    grouped_rtn_baseline,
    quantize_row,
    rtn_fit_quantize,
    rtn_outlier_quantize,
    weighted_kmeans_fit,
)
from icquant.quantizers import round_half_away, storage_breakdown

from oracles import kmeans_1d_dp, nearest_level_error


def test_round_half_away():
    assert round_half_away(np.array([0.5, 1.5, 2.5, -0.5, -1.5, 0.49])).tolist() == [1, 2, 3, -1, -2, 0]


def test_rtn_two_bit_example():
    cb, codes = rtn_fit_quantize([-1, -0.5, 0, 0.5, 1], 2)
    np.testing.assert_allclose(cb.levels(), [-1, -1 / 3, 1 / 3, 1], atol=1e-6)
    np.testing.assert_allclose(cb.dequantize(codes), [-1, -1 / 3, 1 / 3, 1 / 3, 1], atol=1e-6)


def test_rtn_constant_group():
    cb, codes = rtn_fit_quantize([0.75] * 5, 3)
    assert codes.tolist() == [0] * 5
    assert cb.dequantize(codes).tolist() == [0.75] * 5


def test_rtn_levels_are_fixed_points():
    values = [0.0, 0.5, 1.0, 1.5]
    cb, codes = rtn_fit_quantize(values, 2)
    assert cb.dequantize(codes).tolist() == values


def test_rtn_empty_rejected():
    with pytest.raises(ValidationError):
        rtn_fit_quantize([], 2)


def test_rtn_scale_equivariant(rng):
    v = rng.standard_normal(500)
    cb, codes = rtn_fit_quantize(v, 3)
    cb2, codes2 = rtn_fit_quantize(4.0 * v, 3)
    np.testing.assert_array_equal(codes, codes2)
    assert cb2.scale == 4.0 * cb.scale and cb2.zero_point == 4.0 * cb.zero_point


def test_outlier_sign_split_exact():
    neg, pos, signs, codes = rtn_outlier_quantize([-5, -4, 4, 5], 2)
    assert neg.levels().tolist() == [-5, -4] and pos.levels().tolist() == [4, 5]
    assert signs.tolist() == [True, True, False, False]
    assert codes.tolist() == [0, 1, 0, 1]


def test_outlier_all_positive():
    neg, pos, signs, codes = rtn_outlier_quantize([3.0, 4.0, 6.0], 3)
    assert neg is None and not signs.any()
    cb, c = rtn_fit_quantize([3.0, 4.0, 6.0], 2)
    assert pos == cb and codes.tolist() == c.tolist()


@pytest.mark.parametrize("n", [2, 3, 5])
def test_symmetric_outliers_exact(n):
    v = np.array([-2.5, 2.5, -2.5, 2.5])
    neg, pos, signs, codes = rtn_outlier_quantize(v, n)
    out = np.where(signs, neg.dequantize(codes), pos.dequantize(codes))
    assert out.tolist() == v.tolist()


def test_kmeans_separable():
    cb = weighted_kmeans_fit([0, 0, 10, 10], None, 2)
    assert cb.centroids.tolist() == [0, 10] and cb.objective == 0


def test_kmeans_single_cluster_weighted_mean():
    cb = weighted_kmeans_fit([0.0, 1.0], [3.0, 1.0], 1)
    assert cb.centroids.tolist() == [0.25]


def test_kmeans_collapses_to_distinct_values():
    cb = weighted_kmeans_fit([1.0, 1.0, 2.0], None, 4)
    assert cb.centroids.tolist() == [1.0, 2.0]


def test_kmeans_rejects_zero_weights():
    with pytest.raises(ValidationError):
        weighted_kmeans_fit([1.0, 2.0], [0.0, 0.0], 1)
    with pytest.raises(ValidationError):
        weighted_kmeans_fit([1.0, 2.0], [1.0, -1.0], 1)


def test_kmeans_centroids_are_weighted_cluster_means(rng):
    v = rng.standard_normal(300)
    w = rng.uniform(0.1, 5.0, 300)
    cb = weighted_kmeans_fit(v, w, 8, max_iters=500, tol=0.0)
    a = cb.assign(v)
    for j, c in enumerate(cb.centroids):
        sel = a == j
        assert c == pytest.approx(np.average(v[sel], weights=w[sel]), rel=1e-5, abs=1e-6)


def test_kmeans_near_dp_optimum():
    worst = 0.0
    for seed in range(50):
        rng = np.random.default_rng(seed)
        v = rng.standard_normal(256)
        cb = weighted_kmeans_fit(v, None, 4, seed=seed, restarts=10)
        opt = kmeans_1d_dp(v, np.ones_like(v), 4)
        assert cb.objective >= opt * (1 - 1e-6)
        worst = max(worst, cb.objective / opt)
    assert worst <= 1.01


@given(arrays(np.float64, st.integers(5, 200), elements=st.floats(-100, 100)), st.integers(1, 8), st.integers(0, 5))
@settings(max_examples=150, deadline=None)
def test_kmeans_objective_monotone(v, k, seed):
    w = np.random.default_rng(seed).uniform(0, 2, v.size)
    w[0] = 1.0
    cb = weighted_kmeans_fit(v, w, k, seed=seed, restarts=1)
    h = np.array(cb.history)
    # rounding slack only; Lloyd steps never increase the objective
    assert np.all(h[1:] <= h[:-1] * (1 + 1e-12) + 1e-12)


def test_quantize_row_gamma_zero_is_plain_rtn(rng):
    row = rng.standard_normal(300)
    q, gaps = quantize_row(row, 0.0, 3)
    cb, codes = rtn_fit_quantize(row, 3)
    assert gaps.token_count == 0 and q.outlier_count == 0
    np.testing.assert_array_equal(dequantize_row(q, gaps), cb.dequantize(codes))


def test_quantize_row_picks_auto_width(rng):
    q, gaps = quantize_row(rng.standard_normal(4096), 0.05, 2)
    assert gaps.bit_width == 6


def test_codebook_exact_row_round_trips():
    inl = np.array([0.0, 0.25, 0.5, 0.75])
    row = np.tile(inl, 10)
    row[[3, 17]] = [-8.0, 8.0]
    q, gaps = quantize_row(row, 0.05, 2)
    np.testing.assert_array_equal(dequantize_row(q, gaps), row)


@pytest.mark.parametrize("scheme", ["rtn", "sk"])
def test_reconstruction_error_matches_per_element_oracle(rng, scheme):
    row = rng.standard_normal(1000)
    q, gaps = quantize_row(row, 0.05, 3, scheme)
    err = np.sum((dequantize_row(q, gaps) - row) ** 2)
    pos = np.sort(np.argsort(-np.abs(row), kind="stable")[:50])
    mask = np.ones(row.size, bool)
    mask[pos] = False
    expected = nearest_level_error(row[mask], q.inlier_codebook.levels())
    if scheme == "sk":
        expected += nearest_level_error(row[pos], q.outlier_codebook.levels())
    else:
        o = row[pos]
        expected += nearest_level_error(o[o < 0], q.negative_codebook.levels())
        expected += nearest_level_error(o[o >= 0], q.positive_codebook.levels())
    assert err == pytest.approx(expected, rel=1e-5)


def test_mse_quartering_gaussian():
    ratios = []
    for seed in range(100):
        row = np.random.default_rng(seed).standard_normal(4096)
        q, gaps = quantize_row(row, 0.05, 3)
        cb, codes = rtn_fit_quantize(row, 3)
        ratios.append((np.mean((dequantize_row(q, gaps) - row) ** 2), np.mean((cb.dequantize(codes) - row) ** 2)))
    ic, van = np.mean(ratios, axis=0)
    assert 0.2 <= ic / van <= 0.35


@pytest.mark.xfail(
    strict=True,
    reason="min/max RTN: 3 intervals over ~0.54 of the range vs 7 over all of it gives ~1.6x on Gaussian rows",
)
def test_int2_comparable_to_vanilla_int3():
    mse = []
    for seed in range(20):
        row = np.random.default_rng(seed).standard_normal(4096)
        q, gaps = quantize_row(row, 0.05, 2)
        cb, codes = rtn_fit_quantize(row, 3)
        mse.append((np.mean((dequantize_row(q, gaps) - row) ** 2), np.mean((cb.dequantize(codes) - row) ** 2)))
    a, b = np.mean(mse, axis=0)
    assert max(a / b, b / a) <= 1.5


def test_grouped_baseline():
    row = np.random.default_rng(0).standard_normal(4096)
    whole = grouped_rtn_baseline(row, 3, 4096)
    cb, codes = rtn_fit_quantize(row, 3)
    np.testing.assert_array_equal(whole.dequantize(), cb.dequantize(codes))
    g = grouped_rtn_baseline(row, 3, 128)
    assert g.bits_per_weight == 3 + 32 * 64 / 4096
    q, gaps = quantize_row(row, 0.05, 3)
    mse = lambda r: np.mean((r - row) ** 2)
    assert mse(dequantize_row(q, gaps)) < mse(g.dequantize()) < mse(whole.dequantize())
    const = grouped_rtn_baseline(np.repeat([1.0, -2.0], 64), 2, 64)
    assert const.dequantize().tolist() == np.repeat([1.0, -2.0], 64).tolist()


def test_grouped_baseline_rejects_tiny_groups():
    with pytest.raises(ValidationError):
        grouped_rtn_baseline([1.0, 2.0], 2, 1)


def test_storage_identity(rng):
    row = rng.standard_normal(4096)
    q, gaps = quantize_row(row, 0.05, 2, b=6)
    s = storage_breakdown(q, gaps).per_weight()
    assert s["code"] == 2
    assert s["index"] == pytest.approx(gaps.token_count * 6 / 4096)
    assert s["codebook"] == 3 * 64 / 4096
    assert 0.29 < s["index"] < 0.33


def test_dequantize_size_mismatch(rng):
    q, gaps = quantize_row(rng.standard_normal(100), 0.05, 3)
    with pytest.raises(CorruptionError):
        dequantize_row(q, gaps, 99)


def test_sk_weighted_row(rng):
    row = rng.standard_normal(512)
    w = rng.uniform(0.0, 3.0, 512)
    q, gaps = quantize_row(row, 0.05, 2, "sk", weights=w, seed=0)
    assert q.inlier_codebook.centroids.size == 4 and q.outlier_codebook.centroids.size == 4
    assert np.all(np.diff(q.inlier_codebook.centroids) > 0)
