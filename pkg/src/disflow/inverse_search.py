"""Single-patch correspondence search by inverse compositional Gauss-Newton.

The template gradients, the steepest-descent images, and the 2x2 Hessian all
live on the reference level and never change while iterating, so they are
computed once per patch; each iteration only re-extracts the query window at
the current displacement, forms residuals, and applies a precomputed-inverse
Newton step u <- u - H^-1 * sum(S^T * residual).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from numba import njit, prange

from .core import PyramidLevel

NORM_CODES = {"l2": 0, "l1": 1, "huber": 2}

# patch validity: the normal matrix must be invertible and well-conditioned,
# otherwise the patch is carried through at its initialization
DET_FLOOR = 1e-6
COND_LIMIT = 1e6

CONVERGENCE_STEP = 1e-2  # stop once the update norm falls below this (px)


# ---------------------------------------------------------------------------
# kernels
# ---------------------------------------------------------------------------

@njit(cache=True, inline="always")
def _bilin(img, x, y):
    """Clamped bilinear sample of a 2D raster."""
    h, w = img.shape
    if x < 0.0:
        x = 0.0
    elif x > w - 1.0:
        x = w - 1.0
    if y < 0.0:
        y = 0.0
    elif y > h - 1.0:
        y = h - 1.0
    x0 = int(x)
    y0 = int(y)
    x1 = x0 + 1
    if x1 > w - 1:
        x1 = w - 1
    y1 = y0 + 1
    if y1 > h - 1:
        y1 = h - 1
    fx = x - x0
    fy = y - y0
    a = img[y0, x0] + fx * (img[y0, x1] - img[y0, x0])
    b = img[y1, x0] + fx * (img[y1, x1] - img[y1, x0])
    return a + fy * (b - a)


@njit(cache=True, inline="always")
def _transform_residual(e, code, b):
    """Map a raw intensity difference so its square realizes the chosen norm."""
    if code == 1:  # L1: sign(e) * sqrt(|e|)
        r = math.sqrt(abs(e))
        return r if e >= 0.0 else -r
    if code == 2:  # Huber: identity below b, sign(e)*sqrt(2b|e| - b^2) above
        if abs(e) < b:
            return e
        r = math.sqrt(2.0 * b * abs(e) - b * b)
        return r if e >= 0.0 else -r
    return e


@njit(cache=True)
def _patch_precompute(img, gx, gy, x0, y0, ps, tmpl, sdx, sdy):
    """Fill template/steepest-descent buffers; return mean and Hessian entries."""
    tsum = 0.0
    h00 = 0.0
    h01 = 0.0
    h11 = 0.0
    k = 0
    for oy in range(ps):
        py = y0 + oy
        for ox in range(ps):
            px = x0 + ox
            t = _bilin(img, px, py)
            gxv = _bilin(gx, px, py)
            gyv = _bilin(gy, px, py)
            tmpl[k] = t
            sdx[k] = gxv
            sdy[k] = gyv
            tsum += t
            h00 += gxv * gxv
            h01 += gxv * gyv
            h11 += gyv * gyv
            k += 1
    return tsum / (ps * ps), h00, h01, h11


@njit(cache=True)
def _precompute_batch(img, gx, gy, xs, ys, ps, tmpl, sdx, sdy, mean_t, hess):
    for i in range(xs.shape[0]):
        m, h00, h01, h11 = _patch_precompute(
            img, gx, gy, xs[i], ys[i], ps, tmpl[i], sdx[i], sdy[i]
        )
        mean_t[i] = m
        hess[i, 0] = h00
        hess[i, 1] = h01
        hess[i, 2] = h11


@njit(cache=True)
def _patch_optimize(
    qimg, x0, y0, ps, tmpl, sdx, sdy, i00, i01, i11, mean_t,
    u0, v0, iters, mean_norm, code, hb, valid,
):
    """Iterate the inverse-compositional update for one patch.

    Returns (u, v, mean offset, mean absolute residual); the offset and
    residual always describe the returned displacement. Invalid patches are
    evaluated once at their initialization and returned unchanged.
    """
    n = ps * ps
    h, w = qimg.shape
    u = u0
    v = v0
    window = np.empty(n, dtype=np.float64)
    prev_ssd = 1e300
    prev_u = u
    prev_v = v
    prev_off = 0.0
    prev_mar = 0.0
    stop_after_eval = not valid
    k = 0
    while True:
        bx = x0 + u
        by = y0 + v
        wsum = 0.0
        idx = 0
        for oy in range(ps):
            for ox in range(ps):
                val = _bilin(qimg, bx + ox, by + oy)
                window[idx] = val
                wsum += val
                idx += 1
        off = wsum / n - mean_t if mean_norm else 0.0
        ssd = 0.0
        mar = 0.0
        b0 = 0.0
        b1 = 0.0
        for i in range(n):
            e = window[i] - off - tmpl[i]
            mar += abs(e)
            et = _transform_residual(e, code, hb)
            ssd += et * et
            b0 += sdx[i] * et
            b1 += sdy[i] * et
        mar /= n
        if ssd > prev_ssd:
            # the step made things worse: keep the previous iterate
            u = prev_u
            v = prev_v
            off = prev_off
            mar = prev_mar
            break
        if stop_after_eval or k >= iters:
            break
        prev_ssd = ssd
        prev_u = u
        prev_v = v
        prev_off = off
        prev_mar = mar
        du = i00 * b0 + i01 * b1
        dv = i01 * b0 + i11 * b1
        u -= du
        v -= dv
        k += 1
        if math.sqrt(du * du + dv * dv) < CONVERGENCE_STEP:
            stop_after_eval = True
        cx = x0 + u + 0.5 * ps
        cy = y0 + v + 0.5 * ps
        if cx < -w or cx > 2.0 * w or cy < -h or cy > 2.0 * h:
            # runaway displacement: fall back to the initialization
            u = u0
            v = v0
            prev_ssd = 1e300
            stop_after_eval = True
    return u, v, off, mar


@njit(cache=True)
def _optimize_batch(
    qimg, xs, ys, ps, tmpl, sdx, sdy, hinv, mean_t, valid, u_init,
    iters, mean_norm, code, hb, disp, offsets, residuals,
):
    for i in range(xs.shape[0]):
        u, v, off, mar = _patch_optimize(
            qimg, xs[i], ys[i], ps, tmpl[i], sdx[i], sdy[i],
            hinv[i, 0], hinv[i, 1], hinv[i, 2], mean_t[i],
            u_init[i, 0], u_init[i, 1], iters, mean_norm, code, hb, valid[i],
        )
        disp[i, 0] = u
        disp[i, 1] = v
        offsets[i] = off
        residuals[i] = mar


@njit(cache=True, parallel=True)
def _optimize_batch_parallel(
    qimg, xs, ys, ps, tmpl, sdx, sdy, hinv, mean_t, valid, u_init,
    iters, mean_norm, code, hb, disp, offsets, residuals,
):
    # each patch writes only its own slots, so the schedule cannot change results
    for i in prange(xs.shape[0]):
        u, v, off, mar = _patch_optimize(
            qimg, xs[i], ys[i], ps, tmpl[i], sdx[i], sdy[i],
            hinv[i, 0], hinv[i, 1], hinv[i, 2], mean_t[i],
            u_init[i, 0], u_init[i, 1], iters, mean_norm, code, hb, valid[i],
        )
        disp[i, 0] = u
        disp[i, 1] = v
        offsets[i] = off
        residuals[i] = mar


@njit(cache=True)
def _window_stats(qimg, xs, ys, ps, tmpl, mean_t, sel, disp, mean_norm, offsets, residuals):
    """Refresh offset/residual for selected patches at their current displacement."""
    n = ps * ps
    for i in range(xs.shape[0]):
        if not sel[i]:
            continue
        bx = xs[i] + disp[i, 0]
        by = ys[i] + disp[i, 1]
        wsum = 0.0
        for oy in range(ps):
            for ox in range(ps):
                wsum += _bilin(qimg, bx + ox, by + oy)
        off = wsum / n - mean_t[i] if mean_norm else 0.0
        mar = 0.0
        idx = 0
        for oy in range(ps):
            for ox in range(ps):
                mar += abs(_bilin(qimg, bx + ox, by + oy) - off - tmpl[i, idx])
                idx += 1
        offsets[i] = off
        residuals[i] = mar / n


# ---------------------------------------------------------------------------
# conditioning
# ---------------------------------------------------------------------------

def _condition_hessians(hess: np.ndarray, horizontal_only: bool):
    """Validity mask and packed inverses [i00, i01, i11] for (N, 3) Hessians."""
    h00, h01, h11 = hess[:, 0], hess[:, 1], hess[:, 2]
    n = hess.shape[0]
    hinv = np.zeros((n, 3))
    if horizontal_only:
        valid = h00 > DET_FLOOR
        with np.errstate(divide="ignore"):
            hinv[:, 0] = np.where(valid, 1.0 / np.where(valid, h00, 1.0), 0.0)
        return valid, hinv
    tr = h00 + h11
    det = h00 * h11 - h01 * h01
    rel = np.maximum(1.0, 0.25 * tr * tr)
    disc = np.sqrt(np.maximum(tr * tr - 4.0 * det, 0.0))
    lmin = 0.5 * (tr - disc)
    lmax = 0.5 * (tr + disc)
    valid = (det > DET_FLOOR * rel) & (lmin > 0.0) & (lmax <= COND_LIMIT * lmin)
    safe_det = np.where(valid, det, 1.0)
    hinv[:, 0] = np.where(valid, h11 / safe_det, 0.0)
    hinv[:, 1] = np.where(valid, -h01 / safe_det, 0.0)
    hinv[:, 2] = np.where(valid, h00 / safe_det, 0.0)
    return valid, hinv


# ---------------------------------------------------------------------------
# batch interface (used by the pipeline)
# ---------------------------------------------------------------------------

@dataclass
class PatchSet:
    """Struct-of-arrays state for all patches of one grid."""

    patch_size: int
    x_starts: np.ndarray        # (N,) window origins on the reference level
    y_starts: np.ndarray
    templates: np.ndarray       # (N, ps*ps)
    steep_x: np.ndarray         # (N, ps*ps)
    steep_y: np.ndarray
    hessian: np.ndarray         # (N, 3) packed [h00, h01, h11]
    hessian_inv: np.ndarray     # (N, 3), zero rows for invalid patches
    template_mean: np.ndarray   # (N,)
    valid: np.ndarray           # (N,) bool
    init_displacement: np.ndarray  # (N, 2)
    displacement: np.ndarray       # (N, 2)
    offset: np.ndarray             # (N,) query-minus-template window mean
    mean_abs_residual: np.ndarray  # (N,)

    def __len__(self) -> int:
        return self.x_starts.shape[0]


def precompute_patch_set(
    level: PyramidLevel, x_starts, y_starts, patch_size: int,
    horizontal_only: bool = False,
) -> PatchSet:
    """Precompute templates, steepest-descent images and Hessian inverses for
    patches whose windows start at the given reference-level coordinates."""
    xs = np.ascontiguousarray(x_starts, dtype=np.float64)
    ys = np.ascontiguousarray(y_starts, dtype=np.float64)
    n = xs.shape[0]
    ps = int(patch_size)
    tmpl = np.empty((n, ps * ps))
    sdx = np.empty((n, ps * ps))
    sdy = np.empty((n, ps * ps))
    mean_t = np.empty(n)
    hess = np.empty((n, 3))
    _precompute_batch(
        level.image, level.grad_x, level.grad_y, xs, ys, ps,
        tmpl, sdx, sdy, mean_t, hess,
    )
    valid, hinv = _condition_hessians(hess, horizontal_only)
    return PatchSet(
        patch_size=ps,
        x_starts=xs,
        y_starts=ys,
        templates=tmpl,
        steep_x=sdx,
        steep_y=sdy,
        hessian=hess,
        hessian_inv=hinv,
        template_mean=mean_t,
        valid=valid,
        init_displacement=np.zeros((n, 2)),
        displacement=np.zeros((n, 2)),
        offset=np.zeros(n),
        mean_abs_residual=np.zeros(n),
    )


def optimize_patch_set(
    patches: PatchSet,
    query: PyramidLevel,
    iterations: int,
    *,
    residual_norm: str = "l2",
    huber_b: float = 1.0,
    mean_normalization: bool = True,
    threads: int = 1,
) -> None:
    """Run the inverse search for every patch, writing displacements,
    normalization offsets, and residuals in place."""
    code = NORM_CODES[residual_norm]
    args = (
        query.image, patches.x_starts, patches.y_starts, patches.patch_size,
        patches.templates, patches.steep_x, patches.steep_y,
        patches.hessian_inv, patches.template_mean, patches.valid,
        patches.init_displacement, int(iterations), bool(mean_normalization),
        code, float(huber_b),
        patches.displacement, patches.offset, patches.mean_abs_residual,
    )
    if threads > 1:
        import numba

        numba.set_num_threads(min(int(threads), numba.config.NUMBA_NUM_THREADS))
        _optimize_batch_parallel(*args)
    else:
        _optimize_batch(*args)


def refresh_patch_stats(
    patches: PatchSet, query: PyramidLevel, select: np.ndarray,
    mean_normalization: bool = True,
) -> None:
    """Recompute offsets/residuals for the selected patches at their current
    displacement (needed after an outlier reset changes displacements)."""
    if not select.any():
        return
    _window_stats(
        query.image, patches.x_starts, patches.y_starts, patches.patch_size,
        patches.templates, patches.template_mean,
        np.ascontiguousarray(select, dtype=np.bool_), patches.displacement,
        bool(mean_normalization), patches.offset, patches.mean_abs_residual,
    )


# ---------------------------------------------------------------------------
# single-patch interface
# ---------------------------------------------------------------------------

@dataclass
class PatchState:
    """State of one template patch and its displacement estimate."""

    center: tuple[float, float]
    patch_size: int
    template: np.ndarray            # (ps, ps)
    steepest_descent: np.ndarray    # (ps, ps, 2) template-gradient entries
    hessian: np.ndarray             # (2, 2)
    hessian_inverse: np.ndarray | None
    template_mean: float
    valid: bool
    displacement: np.ndarray        # (2,)
    init_displacement: np.ndarray   # (2,)
    mean_offset: float = 0.0
    mean_abs_residual: float = 0.0


def _state_from_set(pset: PatchSet, center) -> PatchState:
    ps = pset.patch_size
    h = pset.hessian[0]
    hessian = np.array([[h[0], h[1]], [h[1], h[2]]])
    if pset.valid[0]:
        hi = pset.hessian_inv[0]
        hessian_inverse = np.array([[hi[0], hi[1]], [hi[1], hi[2]]])
    else:
        hessian_inverse = None
    sd = np.stack(
        [pset.steep_x[0].reshape(ps, ps), pset.steep_y[0].reshape(ps, ps)], axis=-1
    )
    return PatchState(
        center=(float(center[0]), float(center[1])),
        patch_size=ps,
        template=pset.templates[0].reshape(ps, ps),
        steepest_descent=sd,
        hessian=hessian,
        hessian_inverse=hessian_inverse,
        template_mean=float(pset.template_mean[0]),
        valid=bool(pset.valid[0]),
        displacement=np.zeros(2),
        init_displacement=np.zeros(2),
    )


def precompute_patch(
    level: PyramidLevel, center, patch_size: int, horizontal_only: bool = False
) -> PatchState:
    """Build the precomputed state for a patch centered at ``center`` (x, y).

    A patch whose normal matrix is singular or badly conditioned (constant
    or one-directional texture) comes back with ``valid=False`` and no
    Hessian inverse; it will keep whatever displacement it is initialized
    with.
    """
    cx, cy = float(center[0]), float(center[1])
    half = 0.5 * patch_size
    pset = precompute_patch_set(
        level, np.array([cx - half]), np.array([cy - half]), patch_size,
        horizontal_only=horizontal_only,
    )
    return _state_from_set(pset, (cx, cy))


def optimize_patch(
    patch: PatchState,
    query: PyramidLevel,
    iterations: int,
    *,
    residual_norm: str = "l2",
    huber_b: float = 1.0,
    mean_normalization: bool = True,
) -> PatchState:
    """Run up to ``iterations`` inverse-search steps from the patch's
    initialization against the query level; returns an updated copy."""
    if residual_norm not in NORM_CODES:
        raise ValueError(f"unknown residual norm {residual_norm!r}")
    ps = patch.patch_size
    half = 0.5 * ps
    x0 = patch.center[0] - half
    y0 = patch.center[1] - half
    if patch.valid:
        hi = patch.hessian_inverse
        i00, i01, i11 = hi[0, 0], hi[0, 1], hi[1, 1]
    else:
        i00 = i01 = i11 = 0.0
    u, v, off, mar = _patch_optimize(
        query.image, x0, y0, ps,
        np.ascontiguousarray(patch.template.reshape(-1)),
        np.ascontiguousarray(patch.steepest_descent[:, :, 0].reshape(-1)),
        np.ascontiguousarray(patch.steepest_descent[:, :, 1].reshape(-1)),
        i00, i01, i11, patch.template_mean,
        float(patch.init_displacement[0]), float(patch.init_displacement[1]),
        int(iterations), bool(mean_normalization),
        NORM_CODES[residual_norm], float(huber_b), bool(patch.valid),
    )
    return replace(
        patch,
        displacement=np.array([u, v]),
        mean_offset=float(off),
        mean_abs_residual=float(mar),
    )


def residual_transform(eps, norm: str, huber_b: float = 1.0):
    """Vectorized residual transform; squares of the output realize the
    requested penalty (L2, L1, or Huber with threshold ``huber_b``)."""
    if norm not in NORM_CODES:
        raise ValueError(f"unknown residual norm {norm!r}")
    e = np.asarray(eps, dtype=np.float64)
    if norm == "l2":
        out = e.copy()
    elif norm == "l1":
        out = np.sign(e) * np.sqrt(np.abs(e))
    else:
        if huber_b <= 0:
            raise ValueError("huber_b must be > 0")
        tail = np.sqrt(np.maximum(2.0 * huber_b * np.abs(e) - huber_b * huber_b, 0.0))
        out = np.where(np.abs(e) < huber_b, e, np.sign(e) * tail)
    if np.isscalar(eps):
        return float(out)
    return out
