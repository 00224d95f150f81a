"""Rasters, image pyramids, solver parameters, and resampling primitives.

Conventions used across the package:

* Images are 2D float64 arrays in (height, width) layout, intensities
  nominally in [0, 255].
* Flow fields are (height, width, 2) float64 arrays; channel 0 holds the
  horizontal displacement u, channel 1 the vertical displacement v, both in
  pixels of their own resolution.
* Pyramid level 0 is full resolution; level s is downscaled by
  ``downscale ** s`` with flooring.

All constructed objects are immutable: pyramid arrays are marked read-only
so they can be shared freely across concurrent workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np


class ParameterError(ValueError):
    """Invalid solver parameter or parameter combination."""


# ---------------------------------------------------------------------------
# pyramids
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PyramidLevel:
    """One pyramid level: the image plus its x/y gradient rasters."""

    image: np.ndarray
    grad_x: np.ndarray
    grad_y: np.ndarray
    scale_index: int

    @property
    def width(self) -> int:
        return self.image.shape[1]

    @property
    def height(self) -> int:
        return self.image.shape[0]


@dataclass(frozen=True)
class ImagePyramid:
    """Coarse-to-fine stack of levels; ``levels[0]`` is full resolution."""

    levels: tuple[PyramidLevel, ...]
    downscale: int

    def __len__(self) -> int:
        return len(self.levels)

    def __getitem__(self, s: int) -> PyramidLevel:
        return self.levels[s]


def as_image(img) -> np.ndarray:
    """Validate and convert an intensity raster to contiguous float64."""
    arr = np.ascontiguousarray(img, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"image must be 2D and non-empty, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValueError("image contains non-finite values")
    return arr


def image_gradients(img: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Central-difference gradients [-0.5, 0, +0.5] with border replication."""
    gx = np.empty_like(img)
    gx[:, 1:-1] = 0.5 * (img[:, 2:] - img[:, :-2])
    gx[:, 0] = 0.5 * (img[:, 1] - img[:, 0])
    gx[:, -1] = 0.5 * (img[:, -1] - img[:, -2])
    gy = np.empty_like(img)
    gy[1:-1, :] = 0.5 * (img[2:, :] - img[:-2, :])
    gy[0, :] = 0.5 * (img[1, :] - img[0, :])
    gy[-1, :] = 0.5 * (img[-1, :] - img[-2, :])
    return gx, gy


def _box_downsample(img: np.ndarray, factor: int) -> np.ndarray:
    """Box average over factor x factor blocks, then decimate (dims floored)."""
    h = img.shape[0] // factor
    w = img.shape[1] // factor
    if h < 2 or w < 2:
        raise ValueError(
            f"downsampled level would be {w}x{h}; levels below 2 pixels per axis "
            "are not representable"
        )
    crop = img[: h * factor, : w * factor]
    return crop.reshape(h, factor, w, factor).mean(axis=(1, 3))


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


def build_pyramid(img, coarsest_scale: int, downscale: int = 2) -> ImagePyramid:
    """Build levels 0..coarsest_scale with gradients at every level.

    Each level is produced from the previous by a block box average and
    decimation; dimensions follow floor(level0 / downscale**s). Raises
    ValueError if any level drops below 2 pixels in an axis.
    """
    if coarsest_scale < 0:
        raise ParameterError("coarsest_scale must be >= 0")
    if downscale < 2 or int(downscale) != downscale:
        raise ParameterError("downscale must be an integer >= 2")
    current = as_image(img)
    if current.shape[0] < 2 or current.shape[1] < 2:
        raise ValueError("image must be at least 2x2")
    levels = []
    for s in range(coarsest_scale + 1):
        if s > 0:
            current = _box_downsample(current, int(downscale))
        gx, gy = image_gradients(current)
        levels.append(
            PyramidLevel(_freeze(current), _freeze(gx), _freeze(gy), s)
        )
    return ImagePyramid(tuple(levels), int(downscale))


def coarsest_scale_for(
    width: float, patch_size: int, motion_fraction: float, downscale: int = 2
) -> int:
    """Coarsest-scale index needed to capture motions of 1/motion_fraction
    of the image width: the smallest integer >= log_downscale(2*width /
    (motion_fraction*patch_size)), clamped at 0."""
    if width <= 0 or patch_size <= 0 or motion_fraction <= 0:
        raise ParameterError("width, patch_size, and motion_fraction must be > 0")
    arg = 2.0 * width / (motion_fraction * patch_size)
    if arg <= 1.0:
        return 0
    if downscale == 2:
        value = math.log2(arg)
    else:
        value = math.log(arg) / math.log(downscale)
    # tolerate float noise when the argument is an exact power
    return max(0, math.ceil(value - 1e-9))


# ---------------------------------------------------------------------------
# sampling and flow resampling
# ---------------------------------------------------------------------------

def bilinear_map(img: np.ndarray, xs, ys) -> np.ndarray:
    """Bilinear samples of ``img`` at arrays of real coordinates.

    Coordinates outside the raster are clamped to the border.
    """
    h, w = img.shape
    x = np.clip(xs, 0.0, w - 1.0)
    y = np.clip(ys, 0.0, h - 1.0)
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = x - x0
    fy = y - y0
    top = img[y0, x0] * (1.0 - fx) + img[y0, x1] * fx
    bot = img[y1, x0] * (1.0 - fx) + img[y1, x1] * fx
    return top * (1.0 - fy) + bot * fy


def bilinear_sample(img: np.ndarray, x: float, y: float) -> float:
    """Single clamped bilinear sample; exact at integer coordinates."""
    return float(bilinear_map(np.asarray(img, dtype=np.float64), x, y))


def upsample_flow(
    flow: np.ndarray, new_width: int, new_height: int, scale_factor: int
) -> np.ndarray:
    """Bilinearly upsample a flow field and scale displacements by the
    resolution change: output(x) = scale_factor * input(x / scale_factor)."""
    flow = np.asarray(flow, dtype=np.float64)
    xs = np.arange(new_width, dtype=np.float64) / scale_factor
    ys = np.arange(new_height, dtype=np.float64) / scale_factor
    gx, gy = np.meshgrid(xs, ys)
    out = np.empty((new_height, new_width, 2))
    out[:, :, 0] = bilinear_map(flow[:, :, 0], gx, gy) * scale_factor
    out[:, :, 1] = bilinear_map(flow[:, :, 1], gx, gy) * scale_factor
    return out


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class VarParams:
    """Weights and iteration counts for the variational refinement stage.

    The number of outer fixed-point iterations depends on the scale index
    (see :meth:`outer_iters`); the SOR sweep count is fixed.
    """

    intensity_weight: float = 5.0
    gradient_weight: float = 10.0
    smoothness_weight: float = 10.0
    inner_sor_iters: int = 5
    penalizer_eps: float = 0.001
    sor_omega: float = 1.6

    def outer_iters(self, scale_index: int) -> int:
        return scale_index + 1

    def validate(self) -> None:
        if self.intensity_weight < 0 or self.gradient_weight < 0 or self.smoothness_weight < 0:
            raise ParameterError("variational weights must be >= 0")
        if self.inner_sor_iters < 1:
            raise ParameterError("inner_sor_iters must be >= 1")
        if self.penalizer_eps <= 0:
            raise ParameterError("penalizer_eps must be > 0")
        if not 0.0 < self.sor_omega < 2.0:
            raise ParameterError("sor_omega must lie in (0, 2)")


# operating points: (finest_scale, iterations, patch_size, overlap, refined)
_PRESETS = {
    1: (3, 16, 8, 0.30, False),
    2: (3, 12, 8, 0.40, True),
    3: (1, 16, 12, 0.75, True),
    4: (0, 256, 12, 0.75, True),
}

RESIDUAL_NORMS = ("l2", "l1", "huber")


@dataclass(frozen=True)
class DisParams:
    """Full parameter set for the dense-inverse-search pipeline.

    Defaults correspond to operating point 2 (the speed/quality sweet
    spot); use :meth:`preset` for the published operating points 1-4.
    """

    patch_size: int = 8
    overlap: float = 0.40
    iterations: int = 12
    finest_scale: int = 3
    coarsest_scale: int = 5
    downscale: int = 2
    use_mean_normalization: bool = True
    use_densification: bool = True
    residual_norm: str = "l2"
    huber_b: float = 1.0
    variational: VarParams | None = field(default_factory=VarParams)
    mode: str = "flow"
    bidirectional: bool = False

    @classmethod
    def preset(
        cls,
        number: int,
        *,
        width: int | None = None,
        coarsest_scale: int | None = None,
        stereo: bool = False,
    ) -> "DisParams":
        """Operating point ``number`` in 1..4.

        ``width`` derives the coarsest scale so that motions up to 1/8 of
        the image width stay reachable (1024 -> 5, 1226 -> 6); without it
        the 1024-wide default of 5 applies. Stereo mode halves the
        per-patch iteration count.
        """
        if number not in _PRESETS:
            raise ParameterError(f"preset must be 1..4, got {number}")
        finest, iters, ps, ov, refined = _PRESETS[number]
        if stereo:
            iters //= 2
        if coarsest_scale is None:
            if width is not None:
                coarsest_scale = coarsest_scale_for(width, ps, 8.0)
            else:
                coarsest_scale = 5
        coarsest_scale = max(coarsest_scale, finest)
        return cls(
            patch_size=ps,
            overlap=ov,
            iterations=iters,
            finest_scale=finest,
            coarsest_scale=coarsest_scale,
            variational=VarParams() if refined else None,
            mode="stereo" if stereo else "flow",
        )

    def validate(self) -> None:
        if self.patch_size < 2:
            raise ParameterError("patch_size must be >= 2")
        if not 0.0 <= self.overlap < 1.0:
            raise ParameterError("overlap must lie in [0, 1)")
        if self.iterations < 1:
            raise ParameterError("iterations must be >= 1")
        if self.finest_scale < 0 or self.coarsest_scale < self.finest_scale:
            raise ParameterError("need 0 <= finest_scale <= coarsest_scale")
        if self.downscale < 2 or int(self.downscale) != self.downscale:
            raise ParameterError("downscale must be an integer >= 2")
        if self.residual_norm not in RESIDUAL_NORMS:
            raise ParameterError(f"residual_norm must be one of {RESIDUAL_NORMS}")
        if self.residual_norm == "huber" and self.huber_b <= 0:
            raise ParameterError("huber_b must be > 0")
        if self.mode not in ("flow", "stereo"):
            raise ParameterError("mode must be 'flow' or 'stereo'")
        if self.mode == "stereo" and self.bidirectional:
            raise ParameterError("bidirectional matching is not defined for stereo mode")
        if self.variational is not None:
            self.variational.validate()

    def without_variational(self) -> "DisParams":
        return replace(self, variational=None)
