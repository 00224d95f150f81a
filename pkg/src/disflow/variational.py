"""Per-scale variational refinement of a dense flow field.

Minimizes a robust-penalized energy with brightness-constancy, gradient-
constancy, and smoothness terms. The data terms use motion tensors built
from spatio-temporal derivatives and normalized by the local spatial
gradient magnitude; the energy is linearized by fixed-point iterations
(one per recomputation of the tensors at the current flow) and each
linear system is relaxed by in-place successive over-relaxation sweeps
solving for a per-pixel flow increment (du, dv).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .core import PyramidLevel, VarParams, image_gradients
from .inverse_search import _bilin

# packed per-pixel tensor layout: two symmetric 3x3 tensors, six entries each
# [xx, xy, xz, yy, yz, zz]; slots 0-5 brightness, 6-11 gradient constancy
_T0XX, _T0XY, _T0XZ, _T0YY, _T0YZ, _T0ZZ = 0, 1, 2, 3, 4, 5
_TGXX, _TGXY, _TGXZ, _TGYY, _TGYZ, _TGZZ = 6, 7, 8, 9, 10, 11


@dataclass(frozen=True)
class DataTensors:
    """Normalized motion tensors per pixel, as full symmetric 3x3 matrices."""

    intensity: np.ndarray  # (H, W, 3, 3)
    gradient: np.ndarray   # (H, W, 3, 3)


@njit(cache=True)
def _tensor_fields(
    ref, rgx, rgy, rxx, rxy, ryx, ryy,
    qry, qgx, qgy, qxx, qxy, qyx, qyy,
    u, v, out,
):
    """Fill the packed (12, H, W) tensor buffer for the current flow.

    Spatial derivatives are averaged between the reference frame and the
    warped query frame; temporal derivatives are warped-minus-reference.
    Pixels whose warp target leaves the frame, and the one-pixel border
    ring (where replicated gradients corrupt the linearization), carry no
    data constraint; the smoothness term extrapolates them.
    """
    h, w = ref.shape
    for y in range(h):
        for x in range(w):
            wxp = x + u[y, x]
            wyp = y + v[y, x]
            if (
                x == 0 or x == w - 1 or y == 0 or y == h - 1
                or wxp < 0.0 or wxp > w - 1.0 or wyp < 0.0 or wyp > h - 1.0
            ):
                for c in range(12):
                    out[c, y, x] = 0.0
                continue
            iw = _bilin(qry, wxp, wyp)
            gxw = _bilin(qgx, wxp, wyp)
            gyw = _bilin(qgy, wxp, wyp)
            ix = 0.5 * (rgx[y, x] + gxw)
            iy = 0.5 * (rgy[y, x] + gyw)
            iz = iw - ref[y, x]
            b0 = 1.0 / (ix * ix + iy * iy + 0.01)
            out[_T0XX, y, x] = b0 * ix * ix
            out[_T0XY, y, x] = b0 * ix * iy
            out[_T0XZ, y, x] = b0 * ix * iz
            out[_T0YY, y, x] = b0 * iy * iy
            out[_T0YZ, y, x] = b0 * iy * iz
            out[_T0ZZ, y, x] = b0 * iz * iz
            ixx = 0.5 * (rxx[y, x] + _bilin(qxx, wxp, wyp))
            ixy = 0.5 * (rxy[y, x] + _bilin(qxy, wxp, wyp))
            ixz = gxw - rgx[y, x]
            iyx = 0.5 * (ryx[y, x] + _bilin(qyx, wxp, wyp))
            iyy = 0.5 * (ryy[y, x] + _bilin(qyy, wxp, wyp))
            iyz = gyw - rgy[y, x]
            bx = 1.0 / (ixx * ixx + ixy * ixy + 0.01)
            by = 1.0 / (iyx * iyx + iyy * iyy + 0.01)
            out[_TGXX, y, x] = bx * ixx * ixx + by * iyx * iyx
            out[_TGXY, y, x] = bx * ixx * ixy + by * iyx * iyy
            out[_TGXZ, y, x] = bx * ixx * ixz + by * iyx * iyz
            out[_TGYY, y, x] = bx * ixy * ixy + by * iyy * iyy
            out[_TGYZ, y, x] = bx * ixy * ixz + by * iyy * iyz
            out[_TGZZ, y, x] = bx * ixz * ixz + by * iyz * iyz


@njit(cache=True)
def _assemble_system(tens, u, v, delta, gamma, alpha, eps, m00, m01, m11, r0, r1, ws):
    """Per-pixel 2x2 data systems and smoothness weights for one fixed point.

    Robust weights follow the lagged-diffusivity rule 1/(2*sqrt(a^2+eps^2)),
    evaluated at zero increment for the data terms and at the gradient of
    the current flow for the smoothness term.
    """
    h, w = u.shape
    eps2 = eps * eps
    for y in range(h):
        ym = y - 1 if y > 0 else 0
        yp = y + 1 if y < h - 1 else h - 1
        for x in range(w):
            xm = x - 1 if x > 0 else 0
            xp = x + 1 if x < w - 1 else w - 1
            psi_i = 0.5 / np.sqrt(tens[_T0ZZ, y, x] + eps2)
            psi_g = 0.5 / np.sqrt(tens[_TGZZ, y, x] + eps2)
            wi = delta * psi_i
            wg = gamma * psi_g
            m00[y, x] = wi * tens[_T0XX, y, x] + wg * tens[_TGXX, y, x]
            m01[y, x] = wi * tens[_T0XY, y, x] + wg * tens[_TGXY, y, x]
            m11[y, x] = wi * tens[_T0YY, y, x] + wg * tens[_TGYY, y, x]
            r0[y, x] = -(wi * tens[_T0XZ, y, x] + wg * tens[_TGXZ, y, x])
            r1[y, x] = -(wi * tens[_T0YZ, y, x] + wg * tens[_TGYZ, y, x])
            ux = 0.5 * (u[y, xp] - u[y, xm])
            uy = 0.5 * (u[yp, x] - u[ym, x])
            vx = 0.5 * (v[y, xp] - v[y, xm])
            vy = 0.5 * (v[yp, x] - v[ym, x])
            grad2 = ux * ux + uy * uy + vx * vx + vy * vy
            ws[y, x] = alpha * 0.5 / np.sqrt(grad2 + eps2)


@njit(cache=True)
def _sor_sweeps(u, v, du, dv, m00, m01, m11, r0, r1, ws, omega, sweeps, horizontal_only):
    """In-place row-major SOR on the coupled increment; Neumann borders."""
    h, w = u.shape
    for _ in range(sweeps):
        for y in range(h):
            for x in range(w):
                wp = ws[y, x]
                uc = u[y, x]
                vc = v[y, x]
                sw = 0.0
                su = 0.0
                sv = 0.0
                if x > 0:
                    wq = 0.5 * (wp + ws[y, x - 1])
                    sw += wq
                    su += wq * (u[y, x - 1] + du[y, x - 1] - uc)
                    sv += wq * (v[y, x - 1] + dv[y, x - 1] - vc)
                if x < w - 1:
                    wq = 0.5 * (wp + ws[y, x + 1])
                    sw += wq
                    su += wq * (u[y, x + 1] + du[y, x + 1] - uc)
                    sv += wq * (v[y, x + 1] + dv[y, x + 1] - vc)
                if y > 0:
                    wq = 0.5 * (wp + ws[y - 1, x])
                    sw += wq
                    su += wq * (u[y - 1, x] + du[y - 1, x] - uc)
                    sv += wq * (v[y - 1, x] + dv[y - 1, x] - vc)
                if y < h - 1:
                    wq = 0.5 * (wp + ws[y + 1, x])
                    sw += wq
                    su += wq * (u[y + 1, x] + du[y + 1, x] - uc)
                    sv += wq * (v[y + 1, x] + dv[y + 1, x] - vc)
                den_u = m00[y, x] + sw
                if den_u > 1e-12:
                    val = (r0[y, x] + su - m01[y, x] * dv[y, x]) / den_u
                    du[y, x] = (1.0 - omega) * du[y, x] + omega * val
                if not horizontal_only:
                    den_v = m11[y, x] + sw
                    if den_v > 1e-12:
                        val = (r1[y, x] + sv - m01[y, x] * du[y, x]) / den_v
                        dv[y, x] = (1.0 - omega) * dv[y, x] + omega * val


def _second_derivatives(level: PyramidLevel):
    gxx, gxy = image_gradients(level.grad_x)
    gyx, gyy = image_gradients(level.grad_y)
    return gxx, gxy, gyx, gyy


def _packed_tensors_uv(
    reference: PyramidLevel, query: PyramidLevel,
    u: np.ndarray, v: np.ndarray,
    ref_dd, qry_dd,
) -> np.ndarray:
    rxx, rxy, ryx, ryy = ref_dd
    qxx, qxy, qyx, qyy = qry_dd
    out = np.empty((12,) + reference.image.shape)
    _tensor_fields(
        reference.image, reference.grad_x, reference.grad_y, rxx, rxy, ryx, ryy,
        query.image, query.grad_x, query.grad_y, qxx, qxy, qyx, qyy,
        u, v, out,
    )
    return out


def compute_tensors(
    reference: PyramidLevel, query: PyramidLevel, flow: np.ndarray
) -> DataTensors:
    """Normalized brightness- and gradient-constancy tensors at the given
    flow, expanded to full symmetric 3x3 matrices per pixel."""
    if reference.image.shape != query.image.shape:
        raise ValueError("reference and query levels must share dimensions")
    flow = np.asarray(flow, dtype=np.float64)
    if flow.shape[:2] != reference.image.shape:
        raise ValueError("flow dimensions must match the levels")
    packed = _packed_tensors_uv(
        reference, query,
        np.ascontiguousarray(flow[:, :, 0]), np.ascontiguousarray(flow[:, :, 1]),
        _second_derivatives(reference), _second_derivatives(query),
    )
    h, w = reference.image.shape

    def expand(base):
        t = np.empty((h, w, 3, 3))
        t[:, :, 0, 0] = packed[base + 0]
        t[:, :, 0, 1] = t[:, :, 1, 0] = packed[base + 1]
        t[:, :, 0, 2] = t[:, :, 2, 0] = packed[base + 2]
        t[:, :, 1, 1] = packed[base + 3]
        t[:, :, 1, 2] = t[:, :, 2, 1] = packed[base + 4]
        t[:, :, 2, 2] = packed[base + 5]
        return t

    return DataTensors(intensity=expand(0), gradient=expand(6))


def refine(
    flow: np.ndarray,
    reference: PyramidLevel,
    query: PyramidLevel,
    params: VarParams,
    scale_index: int,
    horizontal_only: bool = False,
) -> np.ndarray:
    """Refine a dense field on its own scale.

    Runs ``scale_index + 1`` fixed-point iterations; each recomputes the
    tensors at the current flow and relaxes the linearized system with
    ``params.inner_sor_iters`` SOR sweeps before applying the increment.
    """
    params.validate()
    if reference.image.shape != query.image.shape:
        raise ValueError("reference and query levels must share dimensions")
    if flow.shape[:2] != reference.image.shape:
        raise ValueError("flow dimensions must match the levels")
    if not np.isfinite(flow).all():
        raise ValueError("initial flow contains non-finite values")
    u = np.ascontiguousarray(flow[:, :, 0], dtype=np.float64).copy()
    v = np.ascontiguousarray(flow[:, :, 1], dtype=np.float64).copy()
    ref_dd = _second_derivatives(reference)
    qry_dd = _second_derivatives(query)
    h, w = u.shape
    m00 = np.empty((h, w))
    m01 = np.empty((h, w))
    m11 = np.empty((h, w))
    r0 = np.empty((h, w))
    r1 = np.empty((h, w))
    ws = np.empty((h, w))
    for _ in range(params.outer_iters(scale_index)):
        tens = _packed_tensors_uv(reference, query, u, v, ref_dd, qry_dd)
        _assemble_system(
            tens, u, v,
            params.intensity_weight, params.gradient_weight,
            params.smoothness_weight, params.penalizer_eps,
            m00, m01, m11, r0, r1, ws,
        )
        du = np.zeros((h, w))
        dv = np.zeros((h, w))
        _sor_sweeps(
            u, v, du, dv, m00, m01, m11, r0, r1, ws,
            params.sor_omega, params.inner_sor_iters, horizontal_only,
        )
        u += du
        v += dv
        finite = np.isfinite(u) & np.isfinite(v)
        if not finite.all():
            y, x = np.argwhere(~finite)[0]
            raise RuntimeError(
                f"variational refinement produced a non-finite value at pixel "
                f"(x={x}, y={y})"
            )
    return np.stack([u, v], axis=-1)
