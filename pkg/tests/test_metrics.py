import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from disflow import endpoint_error, endpoint_error_map, error_threshold_curve
from disflow.flowio import UNKNOWN_FLOW


def _const(h, w, u, v):
    f = np.zeros((h, w, 2))
    f[..., 0] = u
    f[..., 1] = v
    return f


def test_perfect_estimate_has_zero_error():
    gt = _const(6, 8, 2.0, -1.0)
    stats = endpoint_error(gt, gt.copy())
    assert stats.epe_all == 0.0
    assert stats.valid_pixel_count == 48
    assert stats.count_s0_10 == 48


def test_three_four_five_example():
    stats = endpoint_error(_const(4, 5, 0.0, 0.0), _const(4, 5, 3.0, 4.0))
    assert stats.epe_all == pytest.approx(5.0)
    assert stats.count_s0_10 == 20
    assert stats.count_s10_40 == 0 and stats.count_s40 == 0


def test_large_magnitude_lands_in_top_bucket():
    stats = endpoint_error(_const(4, 5, 50.0, 0.0), _const(4, 5, 0.0, 0.0))
    assert stats.epe_all == pytest.approx(50.0)
    assert stats.count_s40 == 20
    assert stats.epe_s40 == pytest.approx(50.0)


def test_bucket_edges_key_on_ground_truth_magnitude():
    gt = _const(1, 3, 0.0, 0.0)
    gt[0, 0, 0] = 9.999   # s0-10
    gt[0, 1, 0] = 10.0    # s10-40
    gt[0, 2, 0] = 40.0    # s40+
    stats = endpoint_error(gt, np.zeros_like(gt))
    assert (stats.count_s0_10, stats.count_s10_40, stats.count_s40) == (1, 1, 1)


def test_bucket_counts_sum_and_weighted_mean():
    rng = np.random.default_rng(31)
    gt = rng.normal(0, 25, size=(40, 50, 2))
    est = gt + rng.normal(0, 2, size=gt.shape)
    stats = endpoint_error(gt, est)
    counts = stats.count_s0_10 + stats.count_s10_40 + stats.count_s40
    assert counts == stats.valid_pixel_count
    weighted = (
        stats.epe_s0_10 * stats.count_s0_10
        + stats.epe_s10_40 * stats.count_s10_40
        + stats.epe_s40 * stats.count_s40
    ) / stats.valid_pixel_count
    assert weighted == pytest.approx(stats.epe_all, abs=1e-6)


def test_epe_all_is_symmetric():
    rng = np.random.default_rng(32)
    a = rng.normal(0, 12, size=(12, 9, 2))
    b = rng.normal(0, 12, size=(12, 9, 2))
    assert endpoint_error(a, b).epe_all == pytest.approx(endpoint_error(b, a).epe_all)


def test_sentinel_and_mask_exclusions():
    gt = _const(4, 4, 1.0, 0.0)
    est = _const(4, 4, 1.0, 0.0)
    gt[0, 0] = UNKNOWN_FLOW
    est[1, 1, 0] = UNKNOWN_FLOW
    mask = np.ones((4, 4), dtype=bool)
    mask[2, 2] = False
    stats = endpoint_error(gt, est, validity_mask=mask)
    assert stats.valid_pixel_count == 13
    err_map = endpoint_error_map(gt, est)
    assert np.isnan(err_map[0, 0]) and np.isnan(err_map[1, 1])
    assert err_map[3, 3] == 0.0


def test_dimension_mismatch_raises():
    with pytest.raises(ValueError):
        endpoint_error(_const(4, 4, 0, 0), _const(4, 5, 0, 0))


def test_threshold_curve_examples():
    np.testing.assert_allclose(
        error_threshold_curve([1.0, 3.0, 5.0], [2.0, 4.0]), [2 / 3, 1 / 3]
    )
    np.testing.assert_array_equal(
        error_threshold_curve([0.0, 0.0], [1.0, 2.0]), [0.0, 0.0]
    )
    np.testing.assert_array_equal(error_threshold_curve([0.5, 1.5], [0.0]), [1.0])


def test_threshold_curve_rejects_bad_input():
    with pytest.raises(ValueError):
        error_threshold_curve([], [1.0])
    with pytest.raises(ValueError):
        error_threshold_curve([1.0], [2.0, 1.0])


@settings(max_examples=100, deadline=None)
@given(
    errors=st.lists(st.floats(0, 1e6), min_size=1, max_size=50),
    thresholds=st.lists(st.floats(0, 1e6), min_size=1, max_size=20),
)
def test_threshold_curve_monotone_and_bounded(errors, thresholds):
    curve = error_threshold_curve(errors, sorted(thresholds))
    assert ((curve >= 0.0) & (curve <= 1.0)).all()
    assert (np.diff(curve) <= 1e-12).all()
