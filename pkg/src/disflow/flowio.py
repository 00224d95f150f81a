"""Image and flow-file I/O plus color-wheel flow rendering.

Supported inputs are binary PGM (P5) and PPM (P6); PPM is converted to
luminance. Flow fields persist in the Middlebury .flo layout: a 4-byte tag
holding the 32-bit float 202021.25 (the bytes spell "PIEH"), width and
height as little-endian 32-bit signed integers, then row-major interleaved
(u, v) pairs as little-endian 32-bit floats. Values with magnitude above
1e9 mark invalid pixels.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .metrics import INVALID_THRESHOLD

FLO_TAG = 202021.25
FLO_MAX_DIM = 99999

# an in-band marker for pixels without usable flow (Middlebury convention)
UNKNOWN_FLOW = 1e10

LUMA_WEIGHTS = (0.299, 0.587, 0.114)


class FileFormatError(ValueError):
    """Raised when an input file cannot be decoded or written as requested."""


# ---------------------------------------------------------------------------
# PGM / PPM
# ---------------------------------------------------------------------------

def _parse_pnm_tokens(data: bytes, count: int, start: int):
    """Read whitespace-delimited header integers, tolerating # comments."""
    tokens = []
    i = start
    n = len(data)
    while len(tokens) < count:
        while i < n and data[i : i + 1].isspace():
            i += 1
        if i < n and data[i : i + 1] == b"#":
            while i < n and data[i : i + 1] != b"\n":
                i += 1
            continue
        j = i
        while j < n and not data[j : j + 1].isspace():
            j += 1
        if j == i:
            raise FileFormatError("truncated image header")
        try:
            tokens.append(int(data[i:j]))
        except ValueError as exc:
            raise FileFormatError(f"malformed header token {data[i:j]!r}") from exc
        i = j
    if i >= n:
        raise FileFormatError("missing payload after header")
    return tokens, i + 1  # exactly one whitespace byte separates header and payload


def read_image(path) -> np.ndarray:
    """Decode a binary PGM/PPM file to a float64 intensity raster in [0, 255].

    16-bit samples are rescaled to [0, 255]; PPM pixels are reduced to
    luminance 0.299 R + 0.587 G + 0.114 B.
    """
    data = Path(path).read_bytes()
    magic = data[:2]
    if magic not in (b"P5", b"P6"):
        raise FileFormatError(f"unsupported magic {magic!r}; expected binary P5 or P6")
    channels = 1 if magic == b"P5" else 3
    (width, height, maxval), offset = _parse_pnm_tokens(data, 3, 2)
    if width < 1 or height < 1:
        raise FileFormatError(f"invalid dimensions {width}x{height}")
    if not 0 < maxval < 65536:
        raise FileFormatError(f"invalid maxval {maxval}")
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    need = width * height * channels * dtype.itemsize
    payload = data[offset : offset + need]
    if len(payload) < need:
        raise FileFormatError(
            f"truncated payload: need {need} bytes, found {len(payload)}"
        )
    arr = np.frombuffer(payload, dtype=dtype).astype(np.float64)
    if channels == 3:
        arr = arr.reshape(height, width, 3)
        arr = (
            LUMA_WEIGHTS[0] * arr[:, :, 0]
            + LUMA_WEIGHTS[1] * arr[:, :, 1]
            + LUMA_WEIGHTS[2] * arr[:, :, 2]
        )
    else:
        arr = arr.reshape(height, width)
    if maxval != 255:
        arr *= 255.0 / maxval
    return arr


def write_image(img: np.ndarray, path) -> None:
    """Write a 2D raster as binary PGM or an (H, W, 3) raster as binary PPM,
    rounding and clipping to 8 bits."""
    arr = np.asarray(img)
    data = np.clip(np.rint(arr), 0, 255).astype(np.uint8)
    if data.ndim == 2:
        magic, h, w = b"P5", data.shape[0], data.shape[1]
    elif data.ndim == 3 and data.shape[2] == 3:
        magic, h, w = b"P6", data.shape[0], data.shape[1]
    else:
        raise FileFormatError(f"cannot encode array of shape {arr.shape}")
    with open(path, "wb") as f:
        f.write(magic + b"\n%d %d\n255\n" % (w, h))
        f.write(data.tobytes())


# ---------------------------------------------------------------------------
# .flo
# ---------------------------------------------------------------------------

def write_flo(flow: np.ndarray, path) -> None:
    """Persist an (H, W, 2) field; values are stored as 32-bit floats."""
    flow = np.asarray(flow, dtype=np.float64)
    if flow.ndim != 3 or flow.shape[2] != 2:
        raise ValueError(f"flow must have shape (H, W, 2), got {flow.shape}")
    h, w = flow.shape[:2]
    if w > FLO_MAX_DIM or h > FLO_MAX_DIM:
        raise FileFormatError(f"dimensions {w}x{h} exceed the format limit {FLO_MAX_DIM}")
    if not np.isfinite(flow).all():
        raise ValueError("flow contains non-finite values; use the invalid sentinel")
    with open(path, "wb") as f:
        f.write(struct.pack("<fii", FLO_TAG, w, h))
        f.write(flow.astype("<f4").tobytes())


def read_flo(path) -> np.ndarray:
    """Load a .flo file to an (H, W, 2) float64 field; sentinel values pass
    through unchanged and can be detected with magnitude > 1e9."""
    data = Path(path).read_bytes()
    if len(data) < 12:
        raise FileFormatError("file too short for a flow header")
    tag, w, h = struct.unpack("<fii", data[:12])
    if tag != FLO_TAG:
        raise FileFormatError(f"bad magic {tag!r}; not a flow file")
    if not (0 < w <= FLO_MAX_DIM and 0 < h <= FLO_MAX_DIM):
        raise FileFormatError(f"implausible dimensions {w}x{h}")
    need = 8 * w * h
    if len(data) < 12 + need:
        raise FileFormatError(
            f"truncated payload: need {need} bytes, found {len(data) - 12}"
        )
    arr = np.frombuffer(data[12 : 12 + need], dtype="<f4").astype(np.float64)
    return arr.reshape(h, w, 2)


def flow_valid_mask(flow: np.ndarray) -> np.ndarray:
    """True where both components are finite and below the sentinel range."""
    return (
        np.isfinite(flow).all(axis=-1)
        & (np.abs(flow) <= INVALID_THRESHOLD).all(axis=-1)
    )


# ---------------------------------------------------------------------------
# visualization
# ---------------------------------------------------------------------------

def _hsv_to_rgb(hue: np.ndarray, sat: np.ndarray, val: np.ndarray) -> np.ndarray:
    k = (hue * 6.0) % 6.0
    i = np.floor(k).astype(int)
    f = k - i
    p = val * (1.0 - sat)
    q = val * (1.0 - sat * f)
    t = val * (1.0 - sat * (1.0 - f))
    r = np.choose(i, [val, q, p, p, t, val])
    g = np.choose(i, [t, val, val, q, p, p])
    b = np.choose(i, [p, p, t, val, val, q])
    return np.stack([r, g, b], axis=-1)


def flow_to_color(flow: np.ndarray, max_magnitude: float | None = None) -> np.ndarray:
    """Render a field on the standard color wheel as an (H, W, 3) uint8 image.

    Hue encodes direction and saturation magnitude, so zero flow is white;
    magnitudes are normalized by ``max_magnitude`` (default: the field's
    99th-percentile magnitude) and clamp at full saturation. Invalid
    (sentinel) pixels render black.
    """
    flow = np.asarray(flow, dtype=np.float64)
    u = flow[..., 0]
    v = flow[..., 1]
    valid = flow_valid_mask(flow)
    mag = np.where(valid, np.hypot(u, v), 0.0)
    if max_magnitude is None:
        max_magnitude = float(np.percentile(mag, 99.0))
    if max_magnitude <= 0.0:
        max_magnitude = 1.0
    hue = (np.arctan2(-v, -u) / (2.0 * np.pi) + 0.5) % 1.0
    sat = np.clip(mag / max_magnitude, 0.0, 1.0)
    rgb = _hsv_to_rgb(hue, sat, np.ones_like(sat))
    rgb[~valid] = 0.0
    return np.clip(np.rint(rgb * 255.0), 0, 255).astype(np.uint8)
