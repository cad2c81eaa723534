"""Minimal 8-bit PNG codec (stdlib zlib only).

Encoding always emits filter-0 scanlines at a fixed compression level, so
the bytes of generated images and of base64 thumbnails embedded in reports
are stable across environments. Decoding handles non-interlaced 8-bit
grayscale and RGB files with any scanline filter.
"""

from __future__ import annotations

import struct
import zlib

import numpy as np

from .errors import IngestionError

_SIGNATURE = b"\x89PNG\r\n\x1a\n"
_COMPRESSION_LEVEL = 6


def _chunk(kind: bytes, data: bytes) -> bytes:
    return (
        struct.pack(">I", len(data))
        + kind
        + data
        + struct.pack(">I", zlib.crc32(kind + data) & 0xFFFFFFFF)
    )


def encode_png(image: np.ndarray) -> bytes:
    """Encode an (H,W), (H,W,1) or (H,W,3) uint8 array as PNG bytes."""
    arr = np.asarray(image)
    if arr.dtype != np.uint8:
        raise ValueError("encode_png expects uint8 data")
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3 or arr.shape[2] not in (1, 3):
        raise ValueError(f"unsupported image shape {arr.shape}")
    height, width, channels = arr.shape
    color_type = 0 if channels == 1 else 2

    ihdr = struct.pack(">IIBBBBB", width, height, 8, color_type, 0, 0, 0)
    raw = bytearray()
    for row in range(height):
        raw.append(0)
        raw.extend(arr[row].tobytes())
    idat = zlib.compress(bytes(raw), _COMPRESSION_LEVEL)
    return _SIGNATURE + _chunk(b"IHDR", ihdr) + _chunk(b"IDAT", idat) + _chunk(b"IEND", b"")


def decode_png(data: bytes) -> np.ndarray:
    """Decode PNG bytes into an (H,W,C) uint8 array (C = 1 or 3)."""
    if data[: len(_SIGNATURE)] != _SIGNATURE:
        raise IngestionError("not a PNG file")
    pos = len(_SIGNATURE)
    ihdr = None
    idat = bytearray()
    while pos + 8 <= len(data):
        (length,) = struct.unpack(">I", data[pos : pos + 4])
        kind = data[pos + 4 : pos + 8]
        body = data[pos + 8 : pos + 8 + length]
        pos += 12 + length
        if kind == b"IHDR":
            ihdr = struct.unpack(">IIBBBBB", body)
        elif kind == b"IDAT":
            idat.extend(body)
        elif kind == b"IEND":
            break
    if ihdr is None:
        raise IngestionError("PNG missing IHDR chunk")
    width, height, depth, color_type, _comp, _filt, interlace = ihdr
    if depth != 8:
        raise IngestionError(f"only 8-bit PNGs supported, got bit depth {depth}")
    if interlace != 0:
        raise IngestionError("interlaced PNGs not supported")
    if color_type == 0:
        channels = 1
    elif color_type == 2:
        channels = 3
    else:
        raise IngestionError(f"unsupported PNG color type {color_type}")

    raw = zlib.decompress(bytes(idat))
    stride = width * channels
    expected = (stride + 1) * height
    if len(raw) != expected:
        raise IngestionError("PNG data length mismatch")

    out = np.zeros((height, stride), dtype=np.uint8)
    prior = np.zeros(stride, dtype=np.int32)
    for row in range(height):
        offset = row * (stride + 1)
        ftype = raw[offset]
        line = np.frombuffer(raw, dtype=np.uint8, count=stride, offset=offset + 1).astype(np.int32)
        if ftype == 0:
            recon = line
        elif ftype == 1:
            recon = line.copy()
            for i in range(channels, stride):
                recon[i] = (recon[i] + recon[i - channels]) & 0xFF
        elif ftype == 2:
            recon = (line + prior) & 0xFF
        elif ftype == 3:
            recon = line.copy()
            for i in range(stride):
                left = recon[i - channels] if i >= channels else 0
                recon[i] = (recon[i] + ((left + prior[i]) >> 1)) & 0xFF
        elif ftype == 4:
            recon = line.copy()
            for i in range(stride):
                left = recon[i - channels] if i >= channels else 0
                up = prior[i]
                upleft = prior[i - channels] if i >= channels else 0
                recon[i] = (recon[i] + _paeth(left, up, upleft)) & 0xFF
        else:
            raise IngestionError(f"unknown PNG filter type {ftype}")
        out[row] = recon
        prior = recon
    return out.reshape(height, width, channels)


def _paeth(a: int, b: int, c: int) -> int:
    p = a + b - c
    pa, pb, pc = abs(p - a), abs(p - b), abs(p - c)
    if pa <= pb and pa <= pc:
        return a
    if pb <= pc:
        return b
    return c


def load_image(path) -> np.ndarray:
    """Read a PNG file as float32 values in [0,1], shape (H,W,C)."""
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise IngestionError(f"cannot read image {path}: {exc}") from exc
    return decode_png(data).astype(np.float32) / 255.0


def save_image(path, image: np.ndarray) -> None:
    """Write float values in [0,1] to an 8-bit PNG file."""
    arr = np.asarray(image, dtype=np.float64)
    quantized = np.clip(np.round(arr * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(encode_png(quantized))
