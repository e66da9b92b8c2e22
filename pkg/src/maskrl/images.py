"""Minimal image IO: binary PPM (P6) / PGM (P5) and a zlib-only PNG encoder."""

from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np


def _u8(img: np.ndarray) -> np.ndarray:
    arr = np.asarray(img)
    if arr.dtype != np.uint8:
        arr = np.clip(np.round(arr * 255.0 if arr.max() <= 1.0 + 1e-9 else arr), 0, 255).astype(np.uint8)
    return arr


def write_ppm(path, rgb: np.ndarray) -> Path:
    """rgb: (H, W, 3) uint8 (or floats in [0, 1])."""
    arr = _u8(rgb)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3), got {arr.shape}")
    path = Path(path)
    with open(path, "wb") as f:
        f.write(f"P6\n{arr.shape[1]} {arr.shape[0]}\n255\n".encode())
        f.write(arr.tobytes())
    return path


def write_pgm(path, gray: np.ndarray) -> Path:
    """gray: (H, W) uint8 (or floats in [0, 1]; binary masks welcome)."""
    arr = np.asarray(gray)
    if set(np.unique(arr)) <= {0, 1}:
        arr = (arr * 255).astype(np.uint8)
    arr = _u8(arr)
    if arr.ndim != 2:
        raise ValueError(f"expected (H, W), got {arr.shape}")
    path = Path(path)
    with open(path, "wb") as f:
        f.write(f"P5\n{arr.shape[1]} {arr.shape[0]}\n255\n".encode())
        f.write(arr.tobytes())
    return path


def read_ppm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    magic, w, h, maxval, pixels = _parse_pnm(data)
    if magic != b"P6":
        raise ValueError(f"not a P6 file: {magic!r}")
    return np.frombuffer(pixels, np.uint8)[: w * h * 3].reshape(h, w, 3)


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    magic, w, h, maxval, pixels = _parse_pnm(data)
    if magic != b"P5":
        raise ValueError(f"not a P5 file: {magic!r}")
    return np.frombuffer(pixels, np.uint8)[: w * h].reshape(h, w)


def _parse_pnm(data: bytes):
    fields = []
    i = 0
    while len(fields) < 4:
        while i < len(data) and data[i] in b" \t\r\n":
            i += 1
        if data[i:i + 1] == b"#":
            while i < len(data) and data[i] not in b"\r\n":
                i += 1
            continue
        j = i
        while j < len(data) and data[j] not in b" \t\r\n":
            j += 1
        fields.append(data[i:j])
        i = j
    i += 1  # single whitespace after maxval
    return fields[0], int(fields[1]), int(fields[2]), int(fields[3]), data[i:]


def write_png(path, rgb: np.ndarray) -> Path:
    """Truecolor 8-bit PNG, filter 0 scanlines, single IDAT."""
    arr = _u8(rgb)
    if arr.ndim == 2:
        arr = np.stack([arr] * 3, axis=-1)
    h, w, _ = arr.shape

    def chunk(tag: bytes, payload: bytes) -> bytes:
        return (struct.pack(">I", len(payload)) + tag + payload
                + struct.pack(">I", zlib.crc32(tag + payload) & 0xFFFFFFFF))

    ihdr = struct.pack(">IIBBBBB", w, h, 8, 2, 0, 0, 0)
    raw = b"".join(b"\x00" + arr[y].tobytes() for y in range(h))
    path = Path(path)
    with open(path, "wb") as f:
        f.write(b"\x89PNG\r\n\x1a\n")
        f.write(chunk(b"IHDR", ihdr))
        f.write(chunk(b"IDAT", zlib.compress(raw, 6)))
        f.write(chunk(b"IEND", b""))
    return path
