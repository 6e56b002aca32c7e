import struct

import numpy as np
import pytest
from PIL import Image

from flow_core import FlowField, OcclusionMask
from flow_io import (
    FloFormatError,
    flow_to_color,
    load_flo,
    load_mask_png,
    read_flo,
    save_flo,
    save_flow_png,
    save_mask_png,
    write_flo,
)


GOLDEN_1x1 = struct.pack("<fiiff", 202021.25, 1, 1, 0.5, -0.5)


def test_golden_single_pixel():
    field = FlowField(np.array([[[0.5, -0.5]]]))
    assert write_flo(field) == GOLDEN_1x1
    assert len(GOLDEN_1x1) == 20
    assert GOLDEN_1x1[:4] == b"PIEH"
    decoded = read_flo(GOLDEN_1x1)
    np.testing.assert_array_equal(decoded.data, [[[0.5, -0.5]]])


def test_roundtrip_is_bit_exact():
    rng = np.random.default_rng(7)
    for _ in range(1000):
        h, w = (int(n) for n in rng.integers(1, 33, size=2))
        # arbitrary bit patterns: subnormals, signed zeros, extreme exponents
        bits = rng.integers(0, 2**32, size=(h, w, 2), dtype=np.uint64).astype(np.uint32)
        data = bits.view(np.float32)
        data = np.where(np.isfinite(data), data, np.float32(0))
        field = FlowField(data)
        buf = write_flo(field)
        assert write_flo(read_flo(buf)) == buf
        assert buf[12:] == data.astype("<f4").tobytes()
        np.testing.assert_array_equal(read_flo(buf).data, data)


def test_corrupted_magic():
    buf = bytearray(GOLDEN_1x1)
    buf[0] ^= 0xFF
    with pytest.raises(FloFormatError):
        read_flo(bytes(buf))


def test_truncated_payload():
    with pytest.raises(FloFormatError):
        read_flo(GOLDEN_1x1[:-1])
    with pytest.raises(FloFormatError):
        read_flo(GOLDEN_1x1[:8])


def test_trailing_bytes():
    with pytest.raises(FloFormatError):
        read_flo(GOLDEN_1x1 + b"\x00")


@pytest.mark.parametrize("width, height", [(0, 1), (1, -1), (2**16 + 1, 1)])
def test_implausible_dimensions(width, height):
    with pytest.raises(FloFormatError):
        read_flo(struct.pack("<fii", 202021.25, width, height))


def test_nan_payload_is_rejected():
    with pytest.raises(FloFormatError):
        read_flo(struct.pack("<fiiff", 202021.25, 1, 1, float("nan"), 0.0))


def test_save_and_load(tmp_path):
    field = FlowField.constant(4, 3, 1.25, -2.5)
    path = tmp_path / "a.flo"
    save_flo(path, field)
    assert path.read_bytes() == write_flo(field)
    np.testing.assert_array_equal(load_flo(path).data, field.data)


def test_mask_png(tmp_path):
    mask = OcclusionMask(np.array([[0, 1, 1], [1, 0, 0]]))
    path = tmp_path / "m.png"
    save_mask_png(path, mask)
    with Image.open(path) as img:
        assert img.mode == "L"
        np.testing.assert_array_equal(np.asarray(img), mask.data * 255)
    np.testing.assert_array_equal(load_mask_png(path).data, mask.data)


def test_zero_flow_is_white():
    rgb = flow_to_color(FlowField.zeros(4, 4))
    assert rgb.dtype == np.uint8
    np.testing.assert_array_equal(rgb, 255)


def test_color_is_invariant_to_global_scale():
    rng = np.random.default_rng(3)
    field = FlowField(rng.normal(size=(6, 6, 2)))
    scaled = FlowField(field.data * 2)
    np.testing.assert_array_equal(flow_to_color(field), flow_to_color(scaled))


def test_cardinal_directions_have_distinct_colors():
    u = np.array([[1.0, 0.0, -1.0, 0.0]])
    v = np.array([[0.0, 1.0, 0.0, -1.0]])
    rgb = flow_to_color(FlowField.from_components(u, v))
    colors = {tuple(c) for c in rgb[0]}
    assert len(colors) == 4


def test_color_saturates_past_max_magnitude():
    field = FlowField.from_components(np.array([[2.0, 4.0]]), np.zeros((1, 2)))
    rgb = flow_to_color(field, max_magnitude=2.0)
    np.testing.assert_array_equal(rgb[0, 0], rgb[0, 1])


def test_save_flow_png(tmp_path):
    path = tmp_path / "f.png"
    save_flow_png(path, FlowField.constant(5, 2, 1, 1))
    with Image.open(path) as img:
        assert img.size == (5, 2)
        assert img.mode == "RGB"
