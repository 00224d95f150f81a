import struct

import numpy as np
import pytest

from disflow import flow_to_color, read_flo, read_image, write_flo, write_image
from disflow.flowio import FLO_TAG, UNKNOWN_FLOW, FileFormatError


# ---------------------------------------------------------------------------
# PGM / PPM
# ---------------------------------------------------------------------------

def test_read_p5_basic(tmp_path):
    path = tmp_path / "a.pgm"
    path.write_bytes(b"P5\n2 2\n255\n" + bytes([0, 255, 128, 64]))
    img = read_image(path)
    np.testing.assert_array_equal(img, [[0.0, 255.0], [128.0, 64.0]])


def test_read_p5_with_comments(tmp_path):
    path = tmp_path / "a.pgm"
    path.write_bytes(b"P5\n# a comment\n2 1\n# another\n255\n" + bytes([7, 9]))
    np.testing.assert_array_equal(read_image(path), [[7.0, 9.0]])


def test_read_p5_16bit_scales(tmp_path):
    path = tmp_path / "a.pgm"
    payload = struct.pack(">4H", 0, 65535, 32768, 1000)
    path.write_bytes(b"P5\n2 2\n65535\n" + payload)
    img = read_image(path)
    assert img[0, 0] == 0.0
    assert img[0, 1] == pytest.approx(255.0)
    assert img[1, 0] == pytest.approx(32768 * 255.0 / 65535)


def test_read_p6_luminance(tmp_path):
    path = tmp_path / "a.ppm"
    path.write_bytes(b"P6\n2 1\n255\n" + bytes([255, 255, 255, 255, 0, 0]))
    img = read_image(path)
    assert img[0, 0] == pytest.approx(255.0)
    assert img[0, 1] == pytest.approx(76.245)


def test_read_image_errors(tmp_path):
    bad_magic = tmp_path / "bad.pgm"
    bad_magic.write_bytes(b"P2\n2 2\n255\n0 1 2 3")
    with pytest.raises(FileFormatError):
        read_image(bad_magic)
    truncated = tmp_path / "short.pgm"
    truncated.write_bytes(b"P5\n4 4\n255\n" + bytes(3))
    with pytest.raises(FileFormatError):
        read_image(truncated)
    nonsense = tmp_path / "head.pgm"
    nonsense.write_bytes(b"P5\nx y\n255\n")
    with pytest.raises(FileFormatError):
        read_image(nonsense)


def test_pgm_round_trip_lossless(tmp_path):
    rng = np.random.default_rng(40)
    img = rng.integers(0, 256, size=(13, 17)).astype(np.float64)
    path = tmp_path / "rt.pgm"
    write_image(img, path)
    np.testing.assert_array_equal(read_image(path), img)


def test_ppm_round_trip(tmp_path):
    rng = np.random.default_rng(41)
    rgb = rng.integers(0, 256, size=(5, 7, 3)).astype(np.uint8)
    path = tmp_path / "rt.ppm"
    write_image(rgb, path)
    raw = path.read_bytes()
    assert raw.startswith(b"P6")
    assert raw.endswith(rgb.tobytes())


# ---------------------------------------------------------------------------
# .flo
# ---------------------------------------------------------------------------

def test_flo_magic_bytes_spell_pieh(tmp_path):
    path = tmp_path / "f.flo"
    write_flo(np.zeros((1, 1, 2)), path)
    raw = path.read_bytes()
    assert raw[:4] == b"PIEH"
    assert len(raw) == 20  # 4 tag + 4 width + 4 height + 8 payload


def test_flo_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(42)
    path = tmp_path / "f.flo"
    for _ in range(20):
        h = int(rng.integers(1, 12))
        w = int(rng.integers(1, 12))
        flow = rng.normal(0, 30, size=(h, w, 2)).astype(np.float32).astype(np.float64)
        flow[rng.random(size=(h, w)) < 0.1] = UNKNOWN_FLOW
        write_flo(flow, path)
        back = read_flo(path)
        assert np.array_equal(back, flow)
        # a second write of what was read is byte-identical
        first = path.read_bytes()
        write_flo(back, path)
        assert path.read_bytes() == first


def test_flo_read_errors(tmp_path):
    path = tmp_path / "bad.flo"
    path.write_bytes(b"JUNKxxxxyyyy" + bytes(8))
    with pytest.raises(FileFormatError):
        read_flo(path)
    path.write_bytes(struct.pack("<fii", FLO_TAG, 4, 4) + bytes(10))
    with pytest.raises(FileFormatError):
        read_flo(path)
    path.write_bytes(struct.pack("<fii", FLO_TAG, -1, 4))
    with pytest.raises(FileFormatError):
        read_flo(path)
    path.write_bytes(b"PI")
    with pytest.raises(FileFormatError):
        read_flo(path)


def test_flo_write_errors(tmp_path):
    with pytest.raises(FileFormatError):
        write_flo(np.zeros((1, 100000, 2)), tmp_path / "wide.flo")
    bad = np.zeros((2, 2, 2))
    bad[0, 0, 0] = np.nan
    with pytest.raises(ValueError):
        write_flo(bad, tmp_path / "nan.flo")
    with pytest.raises(ValueError):
        write_flo(np.zeros((2, 2)), tmp_path / "shape.flo")


# ---------------------------------------------------------------------------
# color rendering
# ---------------------------------------------------------------------------

def test_zero_flow_renders_white():
    img = flow_to_color(np.zeros((4, 6, 2)))
    np.testing.assert_array_equal(img, 255)


def test_opposite_flows_have_complementary_hues():
    flow = np.zeros((1, 2, 2))
    flow[0, 0] = (1.0, 0.0)
    flow[0, 1] = (-1.0, 0.0)
    img = flow_to_color(flow, max_magnitude=1.0).astype(int)
    # complementary fully saturated colors sum to white
    np.testing.assert_allclose(img[0, 0] + img[0, 1], [255, 255, 255], atol=1)


def test_magnitudes_clamp_at_full_saturation():
    flow = np.zeros((1, 2, 2))
    flow[0, 0] = (2.0, 0.0)
    flow[0, 1] = (200.0, 0.0)
    img = flow_to_color(flow, max_magnitude=2.0)
    np.testing.assert_array_equal(img[0, 0], img[0, 1])


def test_invalid_pixels_render_black():
    flow = np.zeros((1, 2, 2))
    flow[0, 1] = UNKNOWN_FLOW
    img = flow_to_color(flow)
    np.testing.assert_array_equal(img[0, 1], [0, 0, 0])
