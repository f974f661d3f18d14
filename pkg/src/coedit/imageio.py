"""Minimal binary PPM (P6) / PGM (P5) reader and writer, 8-bit only."""

from __future__ import annotations

import re
from pathlib import Path

import numpy as np

from coedit.errors import ParameterError, ShapeError

_HEADER = re.compile(rb"\A(P[56])\s+(\d+)\s+(\d+)\s+(\d+)\s")


def quantize(img) -> np.ndarray:
    """round(255 x) as uint8; values are clipped to [0, 1] first."""
    return np.round(np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)


def dequantize(raw) -> np.ndarray:
    return np.asarray(raw, dtype=np.float64) / 255.0


def write_ppm(path, img):
    """(3, H, W) float image in [0, 1] -> P6."""
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[0] != 3:
        raise ShapeError(f"PPM needs a (3, H, W) image, got {img.shape}")
    q = img if img.dtype == np.uint8 else quantize(img)
    _, h, w = q.shape
    Path(path).write_bytes(b"P6\n%d %d\n255\n" % (w, h) + np.transpose(q, (1, 2, 0)).tobytes())


def write_pgm(path, img):
    """(H, W) float grid in [0, 1] -> P5."""
    img = np.asarray(img)
    if img.ndim != 2:
        raise ShapeError(f"PGM needs an (H, W) grid, got {img.shape}")
    q = img if img.dtype == np.uint8 else quantize(img)
    h, w = q.shape
    Path(path).write_bytes(b"P5\n%d %d\n255\n" % (w, h) + q.tobytes())


def read_pnm(path, raw: bool = False) -> np.ndarray:
    """Read P6 as (3, H, W) or P5 as (H, W); floats in [0, 1] unless ``raw``."""
    data = Path(path).read_bytes()
    m = _HEADER.match(data)
    if m is None:
        raise ParameterError(f"{path}: not a binary PPM/PGM file")
    kind, w, h, maxval = m.group(1), int(m.group(2)), int(m.group(3)), int(m.group(4))
    if maxval != 255:
        raise ParameterError(f"{path}: only 8-bit images are supported (maxval {maxval})")
    channels = 3 if kind == b"P6" else 1
    body = data[m.end():]
    if len(body) != w * h * channels:
        raise ParameterError(f"{path}: expected {w * h * channels} pixel bytes, found {len(body)}")
    arr = np.frombuffer(body, dtype=np.uint8)
    arr = arr.reshape(h, w, 3).transpose(2, 0, 1) if channels == 3 else arr.reshape(h, w)
    return arr.copy() if raw else dequantize(arr)
