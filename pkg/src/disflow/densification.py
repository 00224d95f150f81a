"""Patch grids, per-scale initialization, outlier reset, and the weighted
averaging that turns overlapping patch displacements into a dense field.

Every pixel of a level is covered by at least one patch window: the grid
walks window origins in steps of ``patch_size - floor(overlap * patch_size)``
and appends one edge-clamped origin per axis when the regular steps stop
short of the border. Densification weights each overlapping patch by the
reciprocal photometric error at the pixel, clamped at 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .core import PyramidLevel, bilinear_map
from .inverse_search import _bilin


@dataclass(frozen=True)
class PatchGrid:
    """Uniform (edge-clamped) patch layout over one pyramid level."""

    width: int
    height: int
    patch_size: int
    spacing: int
    x_origins: np.ndarray  # (nx,) int64 window left edges
    y_origins: np.ndarray  # (ny,) int64 window top edges

    @property
    def n_patches(self) -> int:
        return len(self.x_origins) * len(self.y_origins)

    @property
    def starts(self) -> np.ndarray:
        """(N, 2) window origins, row-major over the grid (y outer, x inner)."""
        gx, gy = np.meshgrid(self.x_origins, self.y_origins)
        return np.stack([gx.ravel(), gy.ravel()], axis=1)

    @property
    def centers(self) -> np.ndarray:
        """(N, 2) patch centers in level coordinates."""
        return self.starts + 0.5 * self.patch_size


def _axis_origins(dim: int, patch_size: int, spacing: int) -> np.ndarray:
    last = dim - patch_size
    origins = list(range(0, last + 1, spacing))
    if origins[-1] != last:
        origins.append(last)  # clamp so the final window reaches the border
    return np.asarray(origins, dtype=np.int64)


def create_grid(width: int, height: int, patch_size: int, overlap: float) -> PatchGrid:
    """Lay out patch windows with the given fractional overlap.

    The overlap is floored to whole pixels; overlap 0 gives adjacent
    non-overlapping windows, and overlap approaching 1 one patch per pixel.
    """
    if not 0.0 <= overlap < 1.0:
        raise ValueError("overlap must lie in [0, 1)")
    if width < patch_size or height < patch_size:
        raise ValueError(
            f"level {width}x{height} is smaller than the patch size {patch_size}"
        )
    overlap_px = int(math.floor(overlap * patch_size + 1e-9))
    spacing = max(1, patch_size - overlap_px)
    return PatchGrid(
        width=width,
        height=height,
        patch_size=patch_size,
        spacing=spacing,
        x_origins=_axis_origins(width, patch_size, spacing),
        y_origins=_axis_origins(height, patch_size, spacing),
    )


def init_patches(
    grid: PatchGrid, coarser_flow: np.ndarray | None, downscale: int
) -> np.ndarray:
    """Per-patch initial displacements: zero on the coarsest scale, otherwise
    the coarser field sampled at center/downscale and scaled by downscale."""
    centers = grid.centers
    if coarser_flow is None:
        return np.zeros((centers.shape[0], 2))
    xs = centers[:, 0] / downscale
    ys = centers[:, 1] / downscale
    init = np.empty((centers.shape[0], 2))
    init[:, 0] = bilinear_map(coarser_flow[:, :, 0], xs, ys) * downscale
    init[:, 1] = bilinear_map(coarser_flow[:, :, 1], xs, ys) * downscale
    return init


def reset_outliers(
    displacements: np.ndarray, init_displacements: np.ndarray, patch_size: int
) -> np.ndarray:
    """Replace any displacement whose update exceeds the patch size with its
    initialization; returns the new array and leaves the input untouched."""
    delta = displacements - init_displacements
    bad = np.hypot(delta[:, 0], delta[:, 1]) > patch_size
    out = displacements.copy()
    out[bad] = init_displacements[bad]
    return out


@njit(cache=True)
def _accumulate_forward(ref, qry, xs, ys, ps, disp, offsets, acc_u, acc_v, acc_w):
    # ascending patch index keeps per-pixel summation order deterministic
    for i in range(xs.shape[0]):
        x0 = xs[i]
        y0 = ys[i]
        u = disp[i, 0]
        v = disp[i, 1]
        off = offsets[i]
        for oy in range(ps):
            yy = y0 + oy
            for ox in range(ps):
                xx = x0 + ox
                d = _bilin(qry, xx + u, yy + v) - off - ref[yy, xx]
                ad = abs(d)
                wgt = 1.0 / (ad if ad > 1.0 else 1.0)
                acc_u[yy, xx] += wgt * u
                acc_v[yy, xx] += wgt * v
                acc_w[yy, xx] += wgt


@njit(cache=True)
def _accumulate_backward(ref, qry, xs, ys, ps, disp, offsets, acc_u, acc_v, acc_w):
    # backward patches live on the query frame; their windows land in the
    # reference frame only after applying the (non-integer) displacement
    h, w = ref.shape
    for j in range(xs.shape[0]):
        ub = disp[j, 0]
        vb = disp[j, 1]
        off = offsets[j]
        sx = xs[j] + ub
        sy = ys[j] + vb
        x_lo = max(0, int(math.ceil(sx)))
        x_hi = min(w - 1, int(math.ceil(sx + ps)) - 1)
        y_lo = max(0, int(math.ceil(sy)))
        y_hi = min(h - 1, int(math.ceil(sy + ps)) - 1)
        for yy in range(y_lo, y_hi + 1):
            for xx in range(x_lo, x_hi + 1):
                d = ref[yy, xx] - off - _bilin(qry, xx - ub, yy - vb)
                ad = abs(d)
                wgt = 1.0 / (ad if ad > 1.0 else 1.0)
                acc_u[yy, xx] += wgt * (-ub)
                acc_v[yy, xx] += wgt * (-vb)
                acc_w[yy, xx] += wgt


def _forward_sums(grid, displacements, offsets, reference_image, query_image):
    h, w = reference_image.shape
    acc_u = np.zeros((h, w))
    acc_v = np.zeros((h, w))
    acc_w = np.zeros((h, w))
    starts = grid.starts
    _accumulate_forward(
        reference_image, query_image,
        np.ascontiguousarray(starts[:, 0]), np.ascontiguousarray(starts[:, 1]),
        grid.patch_size,
        np.ascontiguousarray(displacements, dtype=np.float64),
        np.ascontiguousarray(offsets, dtype=np.float64),
        acc_u, acc_v, acc_w,
    )
    return acc_u, acc_v, acc_w


def densify(
    grid: PatchGrid,
    displacements: np.ndarray,
    offsets: np.ndarray,
    reference_image: np.ndarray,
    query_image: np.ndarray,
) -> np.ndarray:
    """Weighted average of all patch displacements overlapping each pixel.

    The weight of patch i at pixel x is 1/max(1, |d_i(x)|) with d_i(x) the
    intensity difference between the displaced query sample and the
    reference pixel, corrected by the patch's mean-normalization offset.
    """
    acc_u, acc_v, acc_w = _forward_sums(
        grid, displacements, offsets, reference_image, query_image
    )
    if not (acc_w > 0.0).all():
        raise AssertionError("pixel without a contributing patch; grid coverage broken")
    return np.stack([acc_u / acc_w, acc_v / acc_w], axis=-1)


def densify_bidirectional(
    fwd_grid: PatchGrid,
    fwd_displacements: np.ndarray,
    fwd_offsets: np.ndarray,
    bwd_grid: PatchGrid,
    bwd_displacements: np.ndarray,
    bwd_offsets: np.ndarray,
    reference_image: np.ndarray,
    query_image: np.ndarray,
) -> np.ndarray:
    """Merge forward patches and negated backward patches into one forward
    field; backward windows are membership-tested after displacement and
    their templates sampled bilinearly."""
    acc_u, acc_v, acc_w = _forward_sums(
        fwd_grid, fwd_displacements, fwd_offsets, reference_image, query_image
    )
    b_u = np.zeros_like(acc_u)
    b_v = np.zeros_like(acc_v)
    b_w = np.zeros_like(acc_w)
    starts = bwd_grid.starts
    _accumulate_backward(
        reference_image, query_image,
        np.ascontiguousarray(starts[:, 0]), np.ascontiguousarray(starts[:, 1]),
        bwd_grid.patch_size,
        np.ascontiguousarray(bwd_displacements, dtype=np.float64),
        np.ascontiguousarray(bwd_offsets, dtype=np.float64),
        b_u, b_v, b_w,
    )
    if not (acc_w > 0.0).all():
        raise AssertionError("pixel without a contributing patch; grid coverage broken")
    total_w = acc_w + b_w
    # forward coverage keeps total_w positive everywhere, so the zero-weight
    # fallback (use the forward-only average) can never actually trigger
    zero = total_w == 0.0
    if zero.any():
        total_w = np.where(zero, acc_w, total_w)
        b_u = np.where(zero, 0.0, b_u)
        b_v = np.where(zero, 0.0, b_v)
    u = (acc_u + b_u) / total_w
    v = (acc_v + b_v) / total_w
    return np.stack([u, v], axis=-1)
