"""Image and raster export formats.

RGB/semantic/normal maps go to 8-bit PNG (normals remapped from [-1, 1]).
Depth goes to a raw float32 raster: 16-byte header (magic ``DPTH``, u32
width, u32 height, u32 reserved) followed by little-endian f32 row-major
values; +inf marks pixels nothing was hit at.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ParseError

DEPTH_MAGIC = b"DPTH"
_DEPTH_HEADER = struct.Struct("<4sIII")


def to_u8(img: np.ndarray) -> np.ndarray:
    return np.clip(np.round(np.asarray(img, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def save_rgb_png(img: np.ndarray, path: str | Path) -> None:
    """Float [0,1] (H, W, 3) image to 8-bit PNG."""
    Image.fromarray(to_u8(img), mode="RGB").save(Path(path))


def save_normal_png(normals: np.ndarray, path: str | Path) -> None:
    """Camera-space normals in [-1, 1] remapped to [0, 255]."""
    save_rgb_png((np.asarray(normals) + 1.0) * 0.5, path)


def save_depth_raster(depth: np.ndarray, path: str | Path) -> None:
    depth = np.ascontiguousarray(depth, dtype="<f4")
    if depth.ndim != 2:
        raise ValueError(f"depth raster: expected (H, W), got {depth.shape}")
    h, w = depth.shape
    Path(path).write_bytes(_DEPTH_HEADER.pack(DEPTH_MAGIC, w, h, 0) + depth.tobytes())


def load_depth_raster(path: str | Path) -> np.ndarray:
    buf = Path(path).read_bytes()
    if len(buf) < _DEPTH_HEADER.size:
        raise ParseError(f"{path}: depth raster shorter than header")
    magic, w, h, _ = _DEPTH_HEADER.unpack_from(buf, 0)
    if magic != DEPTH_MAGIC:
        raise ParseError(f"{path}: bad depth magic {magic!r}")
    want = _DEPTH_HEADER.size + 4 * w * h
    if len(buf) != want:
        raise ParseError(f"{path}: depth raster size {len(buf)}, expected {want}")
    return np.frombuffer(buf, dtype="<f4", offset=_DEPTH_HEADER.size).reshape(h, w).copy()


def save_depth_preview(depth: np.ndarray, path: str | Path) -> None:
    """8-bit normalized preview; infinite pixels render black."""
    d = np.asarray(depth, dtype=np.float64)
    finite = np.isfinite(d)
    out = np.zeros_like(d)
    if finite.any():
        lo, hi = d[finite].min(), d[finite].max()
        span = (hi - lo) if hi > lo else 1.0
        # Near = bright, far = dark reads better for previews.
        out[finite] = 1.0 - (d[finite] - lo) / span
    Image.fromarray(np.clip(np.round(out * 255.0), 0, 255).astype(np.uint8), mode="L").save(
        Path(path)
    )
