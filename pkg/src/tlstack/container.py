"""TLF5 feature-stack container and 8-bit PNG exports.

Layout (little-endian)::

    magic      4 bytes  b"TLF5"
    version    u8       1
    channels   u8       5
    height     u32
    width      u32
    planes     channels * height * width float32, planar, row-major (R,G,B,T,D)
    meta_len   u32
    meta       meta_len bytes of UTF-8 JSON provenance
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .diffmask import PLANE_NAMES, FeatureStack

MAGIC = b"TLF5"
VERSION = 1
_HEADER = struct.Struct("<4sBBII")
_U32 = struct.Struct("<I")


class ContainerError(ValueError):
    pass


def encode_stack(stack: FeatureStack) -> bytes:
    c, h, w = stack.planes.shape
    meta = json.dumps(stack.provenance, sort_keys=True, separators=(",", ":")).encode("utf-8")
    body = np.ascontiguousarray(stack.planes, dtype="<f4").tobytes()
    return b"".join([_HEADER.pack(MAGIC, VERSION, c, h, w), body, _U32.pack(len(meta)), meta])


def decode_stack(data: bytes) -> FeatureStack:
    if len(data) < _HEADER.size or data[:4] != MAGIC:
        raise ContainerError("not a TLF5 file")
    _, version, c, h, w = _HEADER.unpack_from(data, 0)
    if version != VERSION:
        raise ContainerError(f"unsupported TLF5 version {version}")
    if c != 5:
        raise ContainerError(f"TLF5 channel count {c}, expected 5")
    n = c * h * w * 4
    off = _HEADER.size
    if len(data) < off + n + _U32.size:
        raise ContainerError("TLF5 file truncated (plane data)")
    planes = np.frombuffer(data, dtype="<f4", count=c * h * w, offset=off)
    planes = planes.reshape(c, h, w).astype(np.float32)
    off += n
    (meta_len,) = _U32.unpack_from(data, off)
    off += _U32.size
    if len(data) != off + meta_len:
        raise ContainerError("TLF5 file size does not match its header")
    try:
        meta = json.loads(data[off:].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ContainerError(f"TLF5 provenance is not valid JSON: {exc}") from None
    return FeatureStack(planes, meta)


def write_stack(stack: FeatureStack, path) -> None:
    Path(path).write_bytes(encode_stack(stack))


def read_stack(path) -> FeatureStack:
    return decode_stack(Path(path).read_bytes())


def to_uint8(plane) -> np.ndarray:
    """Scale a [0, 1] plane by 255, round half to even and clamp."""
    return np.clip(np.rint(np.asarray(plane, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def export_pngs(stack: FeatureStack, out_dir, stem: str = "stack") -> list[Path]:
    """Write one greyscale PNG per plane plus an RGB composite."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for name, plane in zip(PLANE_NAMES, stack.planes):
        p = out_dir / f"{stem}_{name}.png"
        Image.fromarray(to_uint8(plane), mode="L").save(p)
        written.append(p)
    rgb = np.stack([to_uint8(stack.planes[i]) for i in range(3)], axis=-1)
    p = out_dir / f"{stem}_rgb.png"
    Image.fromarray(rgb, mode="RGB").save(p)
    written.append(p)
    return written


def save_plane_png(plane, path, scale: float = 1.0) -> None:
    """Debug export of a real-valued plane; ``scale`` maps it onto [0, 1]."""
    Image.fromarray(to_uint8(np.asarray(plane) * scale), mode="L").save(path)
