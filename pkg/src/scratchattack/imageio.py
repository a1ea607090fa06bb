"""Binary PPM (P6, maxval 255) and the raw float tensor format.

Raw tensor layout: b"SCRT", then height, width, channels as little-endian
u32, then h*w*c little-endian float32 values in row-major order.
"""
from __future__ import annotations

import re
import struct
from pathlib import Path

import numpy as np

RAW_MAGIC = b"SCRT"


class ImageFormatError(ValueError):
    pass


def encode_ppm(image: np.ndarray) -> bytes:
    image = np.asarray(image, dtype=float)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ImageFormatError(f"PPM needs an h x w x 3 image, got shape {image.shape}")
    if not np.all(np.isfinite(image)) or image.min() < 0 or image.max() > 1:
        raise ImageFormatError("pixel values outside [0, 1]; save as raw tensor (.scrt) instead")
    h, w, _ = image.shape
    data = np.floor(image * 255 + 0.5).astype(np.uint8)
    return b"P6\n%d %d\n255\n" % (w, h) + data.tobytes()


_HEADER = re.compile(rb"P6(?:\s|#[^\n]*\n)+(\d+)(?:\s|#[^\n]*\n)+(\d+)(?:\s|#[^\n]*\n)+(\d+)\s")


def decode_ppm(data: bytes) -> np.ndarray:
    m = _HEADER.match(data)
    if m is None:
        raise ImageFormatError("not a binary PPM (P6) file")
    w, h, maxval = (int(g) for g in m.groups())
    if maxval != 255:
        raise ImageFormatError(f"unsupported maxval {maxval}")
    body = data[m.end():m.end() + w * h * 3]
    if len(body) != w * h * 3:
        raise ImageFormatError("truncated PPM pixel data")
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w, 3) / 255.0


def encode_raw(image: np.ndarray) -> bytes:
    image = np.asarray(image)
    if image.ndim != 3:
        raise ImageFormatError(f"expected h x w x c, got shape {image.shape}")
    return RAW_MAGIC + struct.pack("<3I", *image.shape) + image.astype("<f4").tobytes()


def decode_raw(data: bytes) -> np.ndarray:
    if data[:4] != RAW_MAGIC or len(data) < 16:
        raise ImageFormatError("not a raw tensor file")
    h, w, c = struct.unpack("<3I", data[4:16])
    body = data[16:]
    if len(body) != h * w * c * 4:
        raise ImageFormatError("raw tensor size does not match header")
    return np.frombuffer(body, dtype="<f4").reshape(h, w, c).astype(float)


def load_image(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:4] == RAW_MAGIC:
        return decode_raw(data)
    return decode_ppm(data)


def save_image(image: np.ndarray, path) -> None:
    """Write ``image``; ``.scrt`` paths get the raw format, anything else P6."""
    path = Path(path)
    data = encode_raw(image) if path.suffix == ".scrt" else encode_ppm(image)
    path.write_bytes(data)
