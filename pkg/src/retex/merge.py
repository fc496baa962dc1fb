"""Splice synthesized texture regions into the retargeted frame and repair
the seams between them by re-synthesizing a thin band from the original."""

from __future__ import annotations

from dataclasses import replace

import numpy as np
from scipy.ndimage import distance_transform_edt

from .synthesis import SynthesisConfig, SynthesisResult, synthesize_region

BAND_RADIUS = 4
BAND_ITERATIONS = 10
BAND_STRIDE = 2
BAND_OMEGA = 0.1


def composite(nt_base: np.ndarray, synthesized, labels: np.ndarray) -> np.ndarray:
    """Take pixel (y, x) from ``synthesized[k - 1]`` where ``labels == k >= 1``, else from ``nt_base``.

    ``synthesized`` holds one full-frame raster per region label.
    """
    nt_base = np.asarray(nt_base)
    labels = np.asarray(labels)
    if labels.shape != nt_base.shape[:2]:
        raise ValueError(f"label map {labels.shape} does not match raster {nt_base.shape[:2]}")
    out = nt_base.copy()
    for k, region in enumerate(synthesized, start=1):
        region = np.asarray(region)
        if region.shape != nt_base.shape:
            raise ValueError(f"region {k} raster {region.shape} does not match {nt_base.shape}")
        sel = labels == k
        out[sel] = region[sel]
    return out


def grow_boundary(labels: np.ndarray, radius: float = BAND_RADIUS) -> np.ndarray:
    """Pixels within ``radius`` of a pixel carrying a different label, on both sides.

    A straight boundary yields a band ``2 * radius`` pixels wide; the image
    border is not a boundary.
    """
    labels = np.asarray(labels)
    band = np.zeros(labels.shape, bool)
    values = np.unique(labels)
    if values.size < 2:
        return band
    for v in values:
        inside = labels == v
        # distance from each pixel of this label to the nearest pixel of any other label
        d = distance_transform_edt(inside)
        band |= inside & (d <= radius)
    return band


def band_config(cfg: SynthesisConfig | None = None, iterations: int = BAND_ITERATIONS) -> SynthesisConfig:
    """Single-level, full-domain, dense-stride variant of ``cfg`` for seam repair."""
    cfg = cfg or SynthesisConfig()
    return replace(
        cfg,
        stride=BAND_STRIDE,
        levels=1,
        omega_schedule=(BAND_OMEGA,),
        domain_fractions=(1.0,),
        em_iters_per_level=iterations,
    )


def resynthesize_band(
    img: np.ndarray,
    band: np.ndarray,
    original: np.ndarray,
    cfg: SynthesisConfig | None = None,
    iterations: int = BAND_ITERATIONS,
) -> SynthesisResult:
    """Re-synthesize only the ``band`` pixels of ``img`` with the whole original as exemplar."""
    img = np.asarray(img, dtype=np.float64)
    band = np.asarray(band, dtype=bool)
    if band.shape != img.shape[:2]:
        raise ValueError(f"band {band.shape} does not match raster {img.shape[:2]}")
    if not band.any():
        return SynthesisResult(img.copy(), skipped=True)
    res = synthesize_region(original, img, band_config(cfg, iterations), None, band)
    # hard constraint: nothing outside the band moves, even through the final clip
    res.image = np.where(band[..., None], res.image, img)
    return res
