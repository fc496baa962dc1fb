"""Texture-aware saliency: patch uniqueness and location cues over SLIC
patches at three scales, pixel-level refinement, and composition with a
contrast-based base map."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .gabor import GaborBank, gabor_features
from .superpixels import segment_stats, slic_superpixels


@dataclass
class SaliencyConfig:
    sigma_s_sq: float = 0.5
    lam: float = 9.0
    sigma_refine: float = 30.0
    scales: tuple = (100, 500, 1000)
    nt_area_threshold: float = 0.30
    refine_neighbors: int = 32
    base_segments: int = 300
    compactness: float = 10.0

    def __post_init__(self):
        if min(self.sigma_s_sq, self.lam, self.sigma_refine, self.nt_area_threshold) <= 0:
            raise ValueError("saliency constants must be positive")
        if any(b <= a for a, b in zip(self.scales, self.scales[1:])) or min(self.scales) < 1:
            raise ValueError(f"scales must be positive and strictly increasing: {self.scales}")


@dataclass
class PatchDescriptors:
    """Per-patch features; row i describes SLIC patch i."""

    centroid: np.ndarray  # (M, 2) normalized (x, y)
    color: np.ndarray  # (M, 3) normalized mean colour
    texture: np.ndarray  # (M, 48) normalized Gabor means then variances
    t_weight: np.ndarray  # (M,) T-pixel count
    area: np.ndarray  # (M,)
    location: np.ndarray = field(default=None)  # H_i
    uniqueness: np.ndarray = field(default=None)  # U_i

    @property
    def saliency(self) -> np.ndarray:
        return self.uniqueness * self.location


def minmax_normalize(a: np.ndarray, axis=None, tol: float = 1e-12) -> np.ndarray:
    """Min-max scale to [0, 1]; channels whose range is <= ``tol`` (round-off) map to 0."""
    a = np.asarray(a, dtype=np.float64)
    lo = a.min(axis=axis, keepdims=True)
    rng = a.max(axis=axis, keepdims=True) - lo
    ok = rng > tol
    return np.where(ok, (a - lo) / np.where(ok, rng, 1.0), 0.0)


def normalized_coords(h: int, w: int):
    """Pixel coordinates mapped so that corners sit at 0 and 1."""
    xs = np.arange(w) / (w - 1) if w > 1 else np.full(w, 0.5)
    ys = np.arange(h) / (h - 1) if h > 1 else np.full(h, 0.5)
    return np.meshgrid(xs, ys)


def _center_prior(h, w, lam):
    gx, gy = normalized_coords(h, w)
    return np.exp(-lam * ((gx - 0.5) ** 2 + (gy - 0.5) ** 2))


def patch_descriptors(r, segments, tmask, gabor, lam: float = 9.0) -> PatchDescriptors:
    h, w = segments.shape
    n = int(segments.max()) + 1
    flat = segments.ravel()
    area = np.bincount(flat, minlength=n).astype(np.float64)
    gx, gy = normalized_coords(h, w)
    cx = np.bincount(flat, weights=gx.ravel(), minlength=n) / area
    cy = np.bincount(flat, weights=gy.ravel(), minlength=n) / area
    color, _ = segment_stats(segments, r)
    gmean, gvar = segment_stats(segments, gabor)
    tw = np.bincount(flat, weights=tmask.ravel().astype(np.float64), minlength=n)
    desc = PatchDescriptors(
        centroid=np.column_stack([cx, cy]),
        color=minmax_normalize(color, axis=0),
        texture=minmax_normalize(np.hstack([gmean, gvar]), axis=0),
        t_weight=tw,
        area=area,
    )
    desc.location = location_cue(segments, tmask, lam)
    return desc


def uniqueness_cue(
    centroid, color, texture, weight, sigma_s_sq: float = 0.5
) -> np.ndarray:
    """U_i = w_i * sum_j exp(-|x_i - x_j|^2 / sigma_s^2) * (|C_i - C_j|^2 + |G_i - G_j|^2)."""
    feats = color if texture is None else np.hstack([color, texture])
    m = len(centroid)
    total = np.empty(m)
    for s in range(0, m, 64):
        e = min(s + 64, m)
        d_s = ((centroid[s:e, None, :] - centroid[None, :, :]) ** 2).sum(-1)
        diff = ((feats[s:e, None, :] - feats[None, :, :]) ** 2).sum(-1)
        total[s:e] = (np.exp(-d_s / sigma_s_sq) * diff).sum(axis=1)
    return np.asarray(weight, dtype=np.float64) * total


def location_cue(segments, tmask, lam: float = 9.0) -> np.ndarray:
    """Mean centre prior over each patch's T-pixels (all pixels when it has none)."""
    h, w = segments.shape
    prior = _center_prior(h, w, lam).ravel()
    flat = segments.ravel()
    n = int(flat.max()) + 1
    t = tmask.ravel().astype(np.float64)
    t_cnt = np.bincount(flat, weights=t, minlength=n)
    t_sum = np.bincount(flat, weights=prior * t, minlength=n)
    a_cnt = np.bincount(flat, minlength=n).astype(np.float64)
    a_sum = np.bincount(flat, weights=prior, minlength=n)
    return np.where(t_cnt > 0, t_sum / np.maximum(t_cnt, 1.0), a_sum / a_cnt)


@dataclass
class TextureSaliency:
    coarse: np.ndarray  # normalized three-scale mean
    refined: np.ndarray
    scale_maps: list  # unnormalized per-scale S maps
    mean_map: np.ndarray  # pixelwise mean of scale_maps, before normalization
    finest_segments: np.ndarray
    finest: PatchDescriptors


def single_scale_saliency(r, tmask, gabor, M, cfg: SaliencyConfig):
    segments = slic_superpixels(r, min(M, r.shape[0] * r.shape[1]), cfg.compactness)
    desc = patch_descriptors(r, segments, tmask, gabor, cfg.lam)
    desc.uniqueness = uniqueness_cue(desc.centroid, desc.color, desc.texture, desc.t_weight, cfg.sigma_s_sq)
    return desc.saliency[segments], segments, desc


def multiscale_texture_saliency(r, tmask, cfg: SaliencyConfig | None = None, gabor=None) -> TextureSaliency:
    cfg = cfg or SaliencyConfig()
    if gabor is None:
        gabor = gabor_features(r)
    maps = []
    for M in cfg.scales:
        smap, segments, desc = single_scale_saliency(r, tmask, gabor, M, cfg)
        maps.append(smap)
    mean_map = np.mean(maps, axis=0)
    coarse = minmax_normalize(mean_map)
    refined = refine_saliency(r, gabor, segments, coarse, cfg.sigma_refine, cfg.refine_neighbors)
    return TextureSaliency(coarse, refined, maps, mean_map, segments, desc)


def refine_saliency(r, gabor, segments, coarse, sigma: float = 30.0, n_neighbors: int = 32) -> np.ndarray:
    """Per-pixel Gaussian-weighted average of patch saliencies over the N nearest patches.

    Patch saliency is the mean of ``coarse`` over the patch; pixel and patch
    features (colour, Gabor, position) share one [0, 1] normalization.
    """
    h, w = segments.shape
    n = int(segments.max()) + 1
    gx, gy = normalized_coords(h, w)
    feats = np.concatenate(
        [
            minmax_normalize(r.reshape(-1, 3), axis=0),
            minmax_normalize(gabor.reshape(h * w, -1), axis=0),
            np.column_stack([gx.ravel(), gy.ravel()]),
        ],
        axis=1,
    )
    flat = segments.ravel()
    area = np.bincount(flat, minlength=n).astype(np.float64)
    pfeat = np.column_stack([np.bincount(flat, weights=feats[:, c], minlength=n) / area for c in range(feats.shape[1])])
    s_patch = np.bincount(flat, weights=np.asarray(coarse).ravel(), minlength=n) / area

    k = min(n_neighbors, n)
    # neighbours by pixel-space centroid distance
    px = np.column_stack([pfeat[:, -2] * max(w - 1, 1), pfeat[:, -1] * max(h - 1, 1)])
    tree = cKDTree(px)
    qx = np.column_stack([gx.ravel() * max(w - 1, 1), gy.ravel() * max(h - 1, 1)])
    out = np.empty(h * w)
    chunk = 16384
    for s in range(0, h * w, chunk):
        e = min(s + chunk, h * w)
        _, idx = tree.query(qx[s:e], k=k)
        idx = np.asarray(idx).reshape(e - s, k)
        d = ((feats[s:e, None, :] - pfeat[idx]) ** 2).sum(-1)
        wgt = np.exp(-d / (2.0 * sigma))
        out[s:e] = (wgt * s_patch[idx]).sum(1) / wgt.sum(1)
    lo, hi = s_patch.min(), s_patch.max()
    return np.clip(out, lo, hi).reshape(h, w)


def base_saliency(r, mode: str = "balanced", K: int = 300, cfg: SaliencyConfig | None = None) -> np.ndarray:
    """Colour-contrast saliency over SLIC patches.

    ``"contrast"`` uses the uniqueness term alone; ``"balanced"`` multiplies
    it by the centre prior.
    """
    if mode not in ("contrast", "balanced"):
        raise ValueError(f"unknown base saliency mode {mode!r}")
    cfg = cfg or SaliencyConfig()
    h, w = r.shape[:2]
    segments = slic_superpixels(r, min(K, h * w), cfg.compactness)
    n = int(segments.max()) + 1
    flat = segments.ravel()
    area = np.bincount(flat, minlength=n).astype(np.float64)
    gx, gy = normalized_coords(h, w)
    cen = np.column_stack(
        [np.bincount(flat, weights=gx.ravel(), minlength=n) / area, np.bincount(flat, weights=gy.ravel(), minlength=n) / area]
    )
    color, _ = segment_stats(segments, r)
    u = uniqueness_cue(cen, minmax_normalize(color, axis=0), None, area / area.mean(), cfg.sigma_s_sq)
    if mode == "balanced":
        u = u * location_cue(segments, np.ones((h, w), bool), cfg.lam)
    return minmax_normalize(u[segments])


def select_base_mode(partition, cfg: SaliencyConfig | None = None) -> str:
    """Contrast-style base map when the NT-region is small, balanced otherwise."""
    cfg = cfg or SaliencyConfig()
    nt_frac = 1.0 - partition.texture_fraction
    return "contrast" if nt_frac < cfg.nt_area_threshold else "balanced"


def compose_significance(base: np.ndarray, tex: np.ndarray, partition) -> np.ndarray:
    """Texture saliency inside T-regions, base saliency elsewhere."""
    if base.shape != tex.shape or base.shape != partition.shape:
        raise ValueError("significance inputs must share dimensions")
    return np.where(partition.texture_mask, tex, base)


@dataclass
class Significance:
    significance: np.ndarray
    base: np.ndarray
    base_mode: str
    texture: TextureSaliency


def significance_map(r, partition, cfg: SaliencyConfig | None = None, bank: GaborBank | None = None) -> Significance:
    cfg = cfg or SaliencyConfig()
    gabor = gabor_features(r, bank)
    tex = multiscale_texture_saliency(r, partition.texture_mask, cfg, gabor)
    mode = select_base_mode(partition, cfg)
    base = base_saliency(r, mode, cfg.base_segments, cfg)
    sig = compose_significance(base, tex.refined, partition)
    return Significance(sig, base, mode, tex)
