"""Raster containers, resampling, pyramids and PNG/JPEG I/O.

Rasters are plain ``float64`` arrays of shape ``(H, W, 3)`` with values in
[0, 1]; scalar fields are ``(H, W)`` arrays.  Everything here is a pure
function of its inputs.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])

_READABLE_FORMATS = {"PNG", "JPEG"}


class RasterIOError(OSError):
    """The file could not be opened or decoded."""

    def __init__(self, path, reason):
        self.path = str(path)
        super().__init__(f"cannot read image {self.path!r}: {reason}")


class UnsupportedFormatError(RasterIOError):
    """The file decoded, but is not PNG or JPEG."""


def check_raster(r: np.ndarray) -> np.ndarray:
    r = np.asarray(r, dtype=np.float64)
    if r.ndim != 3 or r.shape[2] != 3 or r.shape[0] < 1 or r.shape[1] < 1:
        raise ValueError(f"expected an (H, W, 3) raster, got shape {r.shape}")
    return r


def load_raster(path) -> np.ndarray:
    path = Path(path)
    try:
        with Image.open(path) as im:
            fmt = im.format
            if fmt not in _READABLE_FORMATS:
                raise UnsupportedFormatError(path, f"unsupported format {fmt}")
            im.load()
            rgb = im.convert("RGB")
    except UnsupportedFormatError:
        raise
    except FileNotFoundError as exc:
        raise RasterIOError(path, "no such file") from exc
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        raise RasterIOError(path, exc) from exc
    return np.asarray(rgb, dtype=np.float64) / 255.0


def quantize(values: np.ndarray) -> np.ndarray:
    """Map [0, 1] floats to uint8 with round-half-up."""
    v = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)
    return np.floor(v * 255.0 + 0.5).astype(np.uint8)


def save_raster(r: np.ndarray, path) -> None:
    Image.fromarray(quantize(check_raster(r)), mode="RGB").save(str(path), format="PNG")


def save_scalar_field(f: np.ndarray, path) -> None:
    f = np.asarray(f, dtype=np.float64)
    if f.ndim != 2:
        raise ValueError(f"expected an (H, W) field, got shape {f.shape}")
    Image.fromarray(quantize(f), mode="L").save(str(path), format="PNG")


def to_luminance(r: np.ndarray) -> np.ndarray:
    r = check_raster(r)
    return r[..., 0] * 0.299 + r[..., 1] * 0.587 + r[..., 2] * 0.114


def _axis_weights(n_src: int, n_dst: int):
    # pixel-centre alignment, clamp to edge
    pos = (np.arange(n_dst) + 0.5) * (n_src / n_dst) - 0.5
    pos = np.clip(pos, 0.0, n_src - 1)
    lo = np.floor(pos).astype(np.intp)
    hi = np.minimum(lo + 1, n_src - 1)
    frac = pos - lo
    return lo, hi, frac


def resample_bilinear(r: np.ndarray, new_w: int, new_h: int) -> np.ndarray:
    """Bilinear resize of a raster (or a 2-D field) to exactly ``new_w x new_h``."""
    if new_w < 1 or new_h < 1:
        raise ValueError(f"target size must be positive, got {new_w}x{new_h}")
    a = np.asarray(r, dtype=np.float64)
    h, w = a.shape[:2]
    if (w, h) == (new_w, new_h):
        return a.copy()
    lo, hi, fx = _axis_weights(w, new_w)
    extra = (None,) * (a.ndim - 2)
    fxb = fx[(None, slice(None)) + extra]
    tmp = a[:, lo] * (1.0 - fxb) + a[:, hi] * fxb
    lo, hi, fy = _axis_weights(h, new_h)
    fyb = fy[(slice(None), None) + extra]
    out = tmp[lo] * (1.0 - fyb) + tmp[hi] * fyb
    # keep the convex-combination bound exact despite rounding
    return np.clip(out, a.min(), a.max())


def downsample2(a: np.ndarray) -> np.ndarray:
    """2x box-filter downsample; odd trailing rows/cols are edge-replicated."""
    a = np.asarray(a, dtype=np.float64)
    h, w = a.shape[:2]
    pad = [(0, h % 2), (0, w % 2)] + [(0, 0)] * (a.ndim - 2)
    if h % 2 or w % 2:
        a = np.pad(a, pad, mode="edge")
    return 0.25 * (a[0::2, 0::2] + a[1::2, 0::2] + a[0::2, 1::2] + a[1::2, 1::2])


def pyramid_depth(shape, levels: int = 3, min_dim: int = 1) -> int:
    """Largest depth <= ``levels`` whose coarsest level keeps ``min_dim`` pixels."""
    h, w = shape[:2]
    depth = 1
    while depth < levels:
        h, w = math.ceil(h / 2), math.ceil(w / 2)
        if min(h, w) < min_dim:
            break
        depth += 1
    return depth


def build_pyramid(r: np.ndarray, levels: int = 3, min_dim: int = 1) -> list[np.ndarray]:
    """Gaussian-free box pyramid, coarsest level first.

    Fewer than ``levels`` levels are produced when halving would take the
    smaller image dimension below ``min_dim``.
    """
    depth = pyramid_depth(np.shape(r), levels, min_dim)
    out = [np.asarray(r, dtype=np.float64)]
    for _ in range(depth - 1):
        out.append(downsample2(out[-1]))
    return out[::-1]
