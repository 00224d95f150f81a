"""End-point-error statistics with the standard displacement-range buckets
(below 10 px, 10-40 px, 40 px and above) and error-threshold curves."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# values of this magnitude or above mark pixels without usable flow
INVALID_THRESHOLD = 1e9

_BUCKET_EDGES = (10.0, 40.0)


@dataclass(frozen=True)
class EpeStats:
    """Mean end-point error overall and per ground-truth magnitude bucket."""

    epe_all: float
    epe_s0_10: float
    epe_s10_40: float
    epe_s40: float
    count_s0_10: int
    count_s10_40: int
    count_s40: int
    valid_pixel_count: int


def _valid_mask(flow: np.ndarray) -> np.ndarray:
    return (
        np.isfinite(flow).all(axis=-1)
        & (np.abs(flow) <= INVALID_THRESHOLD).all(axis=-1)
    )


def endpoint_error(
    gt: np.ndarray, est: np.ndarray, validity_mask: np.ndarray | None = None
) -> EpeStats:
    """Per-pixel Euclidean error of ``est`` against ``gt``.

    Pixels carrying the invalid sentinel in either field, or masked out by
    ``validity_mask``, are excluded; buckets are keyed on the ground-truth
    magnitude with edges [0,10), [10,40), [40,inf).
    """
    gt = np.asarray(gt, dtype=np.float64)
    est = np.asarray(est, dtype=np.float64)
    if gt.shape != est.shape:
        raise ValueError(f"flow dimensions differ: {gt.shape} vs {est.shape}")
    valid = _valid_mask(gt) & _valid_mask(est)
    if validity_mask is not None:
        valid &= np.asarray(validity_mask, dtype=bool)
    err = np.hypot(gt[..., 0] - est[..., 0], gt[..., 1] - est[..., 1])[valid]
    mag = np.hypot(gt[..., 0], gt[..., 1])[valid]
    lo = mag < _BUCKET_EDGES[0]
    mid = (mag >= _BUCKET_EDGES[0]) & (mag < _BUCKET_EDGES[1])
    hi = mag >= _BUCKET_EDGES[1]

    def mean_of(sel):
        return float(err[sel].mean()) if sel.any() else 0.0

    return EpeStats(
        epe_all=float(err.mean()) if err.size else 0.0,
        epe_s0_10=mean_of(lo),
        epe_s10_40=mean_of(mid),
        epe_s40=mean_of(hi),
        count_s0_10=int(lo.sum()),
        count_s10_40=int(mid.sum()),
        count_s40=int(hi.sum()),
        valid_pixel_count=int(valid.sum()),
    )


def endpoint_error_map(gt: np.ndarray, est: np.ndarray) -> np.ndarray:
    """Per-pixel end-point errors; invalid pixels come back as NaN."""
    gt = np.asarray(gt, dtype=np.float64)
    est = np.asarray(est, dtype=np.float64)
    if gt.shape != est.shape:
        raise ValueError(f"flow dimensions differ: {gt.shape} vs {est.shape}")
    err = np.hypot(gt[..., 0] - est[..., 0], gt[..., 1] - est[..., 1])
    return np.where(_valid_mask(gt) & _valid_mask(est), err, np.nan)


def error_threshold_curve(errors, thresholds) -> np.ndarray:
    """Fraction of errors strictly above each threshold.

    Thresholds must be sorted ascending; the result is non-increasing and
    bounded in [0, 1].
    """
    err = np.asarray(errors, dtype=np.float64).ravel()
    if err.size == 0:
        raise ValueError("cannot build a threshold curve from an empty error list")
    th = np.asarray(thresholds, dtype=np.float64).ravel()
    if th.size and (np.diff(th) < 0).any():
        raise ValueError("thresholds must be sorted ascending")
    return np.array([(err > t).mean() for t in th])
