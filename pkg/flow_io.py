import os
from typing import Optional, Union
import numpy as np
from matplotlib import colors
from PIL import Image

from flow_core import FlowError, FlowField, OcclusionMask, magnitude
from settings import FLO_MAGIC, MAX_FLO_DIM


PathLike = Union[str, os.PathLike]

_HEADER_BYTES = 12
_MAGIC_BYTES = np.array([FLO_MAGIC], dtype="<f4").tobytes()  # b"PIEH"


class FloFormatError(FlowError, ValueError):
    pass


def write_flo(field: FlowField) -> bytes:
    """
    Serializes a flow field in the Middlebury `.flo` layout:
    float32 magic, int32 width, int32 height, then row-major interleaved (u, v)
    float32 values, all little-endian.
    """
    header = _MAGIC_BYTES + np.array([field.width, field.height], dtype="<i4").tobytes()
    return header + field.data.astype("<f4", copy=False).tobytes(order="C")


def read_flo(buf: bytes) -> FlowField:
    if len(buf) < _HEADER_BYTES:
        raise FloFormatError("truncated header: %d bytes" % len(buf))
    if buf[:4] != _MAGIC_BYTES:
        raise FloFormatError(
            "bad magic %r, expected %r (%s)" % (buf[:4], _MAGIC_BYTES, FLO_MAGIC)
        )
    width, height = (int(x) for x in np.frombuffer(buf, dtype="<i4", count=2, offset=4))
    if not (0 < width <= MAX_FLO_DIM and 0 < height <= MAX_FLO_DIM):
        raise FloFormatError("implausible dimensions %d x %d" % (width, height))
    expected = _HEADER_BYTES + width * height * 2 * 4
    if len(buf) != expected:
        raise FloFormatError(
            "payload size mismatch: %d bytes for %dx%d, expected %d"
            % (len(buf), width, height, expected)
        )
    data = np.frombuffer(buf, dtype="<f4", offset=_HEADER_BYTES)
    try:
        return FlowField(data.reshape(height, width, 2).astype(np.float32))
    except FlowError as e:
        raise FloFormatError(str(e)) from e


def save_flo(path: PathLike, field: FlowField) -> None:
    with open(path, "wb") as f:
        f.write(write_flo(field))


def load_flo(path: PathLike) -> FlowField:
    with open(path, "rb") as f:
        return read_flo(f.read())


def save_mask_png(path: PathLike, mask: OcclusionMask) -> None:
    # 8-bit grayscale, 0 = visible, 255 = occluded
    Image.fromarray((mask.data * 255).astype(np.uint8), mode="L").save(path)


def load_mask_png(path: PathLike) -> OcclusionMask:
    with Image.open(path) as img:
        arr = np.asarray(img.convert("L"))
    return OcclusionMask(arr > 127)


def save_rgb_png(path: PathLike, rgb: np.ndarray) -> None:
    Image.fromarray(np.ascontiguousarray(rgb, dtype=np.uint8), mode="RGB").save(path)


def flow_to_color(field: FlowField, max_magnitude: Optional[float] = None) -> np.ndarray:
    """
    Colour-codes a flow field: hue is the direction, saturation the magnitude
    relative to `max_magnitude` (the field's own maximum when omitted).
    Zero flow is white.

    Returns:
        H x W x 3 uint8 RGB image
    """
    mag = magnitude(field)
    if max_magnitude is None:
        max_magnitude = float(mag.max())
    u = field.u.astype(np.float64)
    v = field.v.astype(np.float64)
    hue = np.mod(np.arctan2(v, u) / (2 * np.pi), 1.0)
    if max_magnitude > 0:
        sat = np.clip(mag / max_magnitude, 0.0, 1.0)
    else:
        sat = np.zeros_like(mag)
    hsv = np.stack([hue, sat, np.ones_like(mag)], axis=-1)
    rgb = colors.hsv_to_rgb(hsv)
    return np.round(rgb * 255).astype(np.uint8)


def save_flow_png(
    path: PathLike, field: FlowField, max_magnitude: Optional[float] = None
) -> None:
    save_rgb_png(path, flow_to_color(field, max_magnitude))
