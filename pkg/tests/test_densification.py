import numpy as np
import pytest

from disflow import (
    create_grid,
    densify,
    densify_bidirectional,
    init_patches,
    reset_outliers,
)

from synth import oracle_densify


# ---------------------------------------------------------------------------
# grids
# ---------------------------------------------------------------------------

def test_grid_adjacent_patches():
    grid = create_grid(16, 16, patch_size=8, overlap=0.0)
    assert grid.spacing == 8
    assert grid.n_patches == 4
    np.testing.assert_array_equal(np.unique(grid.centers[:, 0]), [4.0, 12.0])
    np.testing.assert_array_equal(np.unique(grid.centers[:, 1]), [4.0, 12.0])


def test_grid_overlap_flooring():
    # 0.3 * 8 = 2.4 px overlap floors to 2, so windows advance by 6
    assert create_grid(32, 32, 8, 0.3).spacing == 6
    assert create_grid(32, 32, 8, 0.4).spacing == 5
    assert create_grid(48, 48, 12, 0.75).spacing == 3


def test_grid_clamps_last_center():
    grid = create_grid(17, 17, patch_size=8, overlap=0.0)
    np.testing.assert_array_equal(np.unique(grid.centers[:, 0]), [4.0, 12.0, 13.0])
    np.testing.assert_array_equal(np.unique(grid.centers[:, 1]), [4.0, 12.0, 13.0])


def test_grid_rejects_small_levels():
    with pytest.raises(ValueError):
        create_grid(7, 16, patch_size=8, overlap=0.0)


def test_grid_dense_limit_one_patch_per_pixel():
    grid = create_grid(12, 12, patch_size=8, overlap=0.999)
    assert grid.spacing == 1
    assert len(grid.x_origins) == 5  # one window start per admissible pixel


def _coverage_counts(grid):
    cover = np.zeros((grid.height, grid.width), dtype=int)
    for x0, y0 in grid.starts:
        cover[y0:y0 + grid.patch_size, x0:x0 + grid.patch_size] += 1
    return cover


def test_grid_coverage_200_random_layouts():
    rng = np.random.default_rng(11)
    for _ in range(200):
        ps = int(rng.integers(2, 17))
        w = int(rng.integers(ps, 64))
        h = int(rng.integers(ps, 64))
        ov = float(rng.uniform(0.0, 0.999))
        grid = create_grid(w, h, ps, ov)
        assert (_coverage_counts(grid) >= 1).all()


# ---------------------------------------------------------------------------
# initialization / outlier reset
# ---------------------------------------------------------------------------

def test_init_without_coarser_flow_is_zero():
    grid = create_grid(16, 16, 8, 0.0)
    np.testing.assert_array_equal(init_patches(grid, None, 2), 0.0)


def test_init_from_constant_coarser_flow():
    grid = create_grid(16, 16, 8, 0.0)
    coarser = np.zeros((8, 8, 2))
    coarser[..., 0] = 1.0
    coarser[..., 1] = -2.0
    init = init_patches(grid, coarser, 2)
    np.testing.assert_allclose(init[:, 0], 2.0)
    np.testing.assert_allclose(init[:, 1], -4.0)


def test_init_from_ramp_interpolates_and_scales():
    grid = create_grid(16, 16, 8, 0.0)
    xs = np.arange(8, dtype=float)
    coarser = np.zeros((8, 8, 2))
    coarser[..., 0] = xs[None, :]  # u(x, y) = x on the coarser level
    init = init_patches(grid, coarser, 2)
    # u_init = 2 * u(center / 2) = 2 * (center / 2) = center
    np.testing.assert_allclose(init[:, 0], grid.centers[:, 0])
    np.testing.assert_allclose(init[:, 1], 0.0)


def test_reset_outliers_examples():
    disp = np.array([[3.0, 4.0], [6.0, 6.0], [1.0, 1.0]])
    init = np.array([[0.0, 0.0], [0.0, 0.0], [1.0, 1.0]])
    out = reset_outliers(disp, init, patch_size=8)
    np.testing.assert_array_equal(out[0], [3.0, 4.0])   # |delta| = 5 <= 8: kept
    np.testing.assert_array_equal(out[1], [0.0, 0.0])   # |delta| ~ 8.49 > 8: reset
    np.testing.assert_array_equal(out[2], [1.0, 1.0])   # unchanged at init


def test_reset_outliers_is_idempotent_and_pure():
    rng = np.random.default_rng(12)
    disp = rng.normal(0, 8, size=(64, 2))
    init = rng.normal(0, 1, size=(64, 2))
    disp_before = disp.copy()
    once = reset_outliers(disp, init, 8)
    twice = reset_outliers(once, init, 8)
    np.testing.assert_array_equal(once, twice)
    np.testing.assert_array_equal(disp, disp_before)


# ---------------------------------------------------------------------------
# densification
# ---------------------------------------------------------------------------

def test_densify_single_contributor_returns_patch_displacement():
    grid = create_grid(8, 8, 8, 0.0)
    ref = np.zeros((8, 8))
    qry = np.full((8, 8), 0.5)  # |d| = 0.5 < 1, weight clamps to 1
    flow = densify(grid, np.array([[1.25, -0.5]]), np.zeros(1), ref, qry)
    np.testing.assert_array_equal(flow[..., 0], 1.25)
    np.testing.assert_array_equal(flow[..., 1], -0.5)


def two_patch_example():
    """Two overlapping patches whose residuals at pixel (5, 3) are exactly
    1 and 4, giving weights 1 and 1/4 for displacements (1,0) and (3,0)."""
    grid = create_grid(12, 8, patch_size=8, overlap=0.5)
    assert grid.n_patches == 2
    ref = np.zeros((8, 12))
    qry = np.zeros((8, 12))
    qry[3, 6] = 1.0   # sampled by patch 1 at (5,3) + (1,0)
    qry[3, 8] = 4.0   # sampled by patch 2 at (5,3) + (3,0)
    disp = np.array([[1.0, 0.0], [3.0, 0.0]])
    return grid, disp, np.zeros(2), ref, qry


def test_densify_two_patch_weighted_average():
    grid, disp, offs, ref, qry = two_patch_example()
    flow = densify(grid, disp, offs, ref, qry)
    # (1*1 + 0.25*3) / 1.25 = 1.4
    assert flow[3, 5, 0] == pytest.approx(1.4, abs=1e-9)
    assert flow[3, 5, 1] == 0.0


def test_densify_shared_displacement_is_exact():
    rng = np.random.default_rng(13)
    grid = create_grid(20, 14, 8, 0.5)
    ref = rng.uniform(0, 255, (14, 20))
    qry = rng.uniform(0, 255, (14, 20))
    disp = np.tile([2.5, -1.0], (grid.n_patches, 1))
    flow = densify(grid, disp, np.zeros(grid.n_patches), ref, qry)
    np.testing.assert_allclose(flow[..., 0], 2.5, atol=1e-12)
    np.testing.assert_allclose(flow[..., 1], -1.0, atol=1e-12)


def test_densify_matches_independent_oracle_and_is_convex():
    rng = np.random.default_rng(14)
    for _ in range(10):
        ps = int(rng.integers(4, 10))
        w = int(rng.integers(ps, 40))
        h = int(rng.integers(ps, 40))
        grid = create_grid(w, h, ps, float(rng.uniform(0, 0.9)))
        ref = rng.uniform(0, 255, (h, w))
        qry = rng.uniform(0, 255, (h, w))
        disp = rng.normal(0, 2, size=(grid.n_patches, 2))
        offs = rng.normal(0, 1, size=grid.n_patches)
        flow = densify(grid, disp, offs, ref, qry)
        expected, z = oracle_densify(grid.starts, ps, disp, offs, ref, qry)
        np.testing.assert_allclose(flow, expected, atol=1e-9)
        assert (z > 0).all()
        # convex combination per component
        for c in range(2):
            assert (flow[..., c] >= disp[:, c].min() - 1e-12).all()
            assert (flow[..., c] <= disp[:, c].max() + 1e-12).all()


def test_densify_is_deterministic():
    grid, disp, offs, ref, qry = two_patch_example()
    a = densify(grid, disp, offs, ref, qry)
    b = densify(grid, disp, offs, ref, qry)
    np.testing.assert_array_equal(a, b)


# ---------------------------------------------------------------------------
# bidirectional merge
# ---------------------------------------------------------------------------

def test_bidirectional_opposite_backward_equals_forward():
    rng = np.random.default_rng(15)
    grid = create_grid(16, 16, 8, 0.0)
    img = rng.uniform(0, 255, (16, 16))
    disp = np.tile([1.0, 0.0], (grid.n_patches, 1))
    offs = np.zeros(grid.n_patches)
    fwd_only = densify(grid, disp, offs, img, img)
    merged = densify_bidirectional(
        grid, disp, offs, grid, -disp, offs, img, img
    )
    np.testing.assert_allclose(merged, fwd_only, atol=1e-9)


def test_bidirectional_no_backward_overlap_falls_back_to_forward():
    grid, disp, offs, ref, qry = two_patch_example()
    bwd_grid = create_grid(12, 8, 8, 0.5)
    # push every backward window fully outside the reference frame
    bwd_disp = np.tile([50.0, 50.0], (bwd_grid.n_patches, 1))
    merged = densify_bidirectional(
        grid, disp, offs, bwd_grid, bwd_disp, np.zeros(bwd_grid.n_patches), ref, qry
    )
    np.testing.assert_allclose(merged, densify(grid, disp, offs, ref, qry), atol=1e-12)


def test_bidirectional_hand_example():
    # one forward contributor u=(2,0) with |d|=1 and one backward contributor
    # u_b=(-2,0) with |d|=1 at every covered pixel -> merged field is (2,0)
    grid = create_grid(8, 8, 8, 0.0)
    ref = np.zeros((8, 8))
    qry = np.zeros((8, 8))
    fwd_disp = np.array([[2.0, 0.0]])
    bwd_disp = np.array([[-2.0, 0.0]])
    offs = np.array([1.0])  # forces |d| = 1 everywhere on both sides
    merged = densify_bidirectional(
        grid, fwd_disp, offs, grid, bwd_disp, offs, ref, qry
    )
    # backward windows shifted by (-2, 0) still overlap pixels 0..5
    np.testing.assert_allclose(merged[:, :6, 0], 2.0, atol=1e-12)
    np.testing.assert_allclose(merged[..., 1], 0.0, atol=1e-12)


def test_bidirectional_backward_membership_is_shifted():
    grid = create_grid(8, 8, 8, 0.0)
    ref = np.zeros((8, 8))
    qry = np.zeros((8, 8))
    fwd_disp = np.array([[0.0, 0.0]])
    bwd_disp = np.array([[-3.5, 0.0]])
    merged = densify_bidirectional(
        grid, fwd_disp, np.zeros(1), grid, bwd_disp, np.zeros(1), ref, qry
    )
    # pixels x >= ceil(-3.5 + 8) = 5 lie outside the displaced backward
    # window, so only the forward patch (u = 0) contributes there
    assert (merged[:, 5:, 0] == 0.0).all()
    # covered pixels average 0 and +3.5 with equal unit weights
    np.testing.assert_allclose(merged[:, :4, 0], 1.75, atol=1e-12)
