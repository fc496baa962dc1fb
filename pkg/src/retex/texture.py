"""Texture detection: relative-total-variation reliability, iterative
thresholding, superpixel voting, graph-cut refinement and region extraction."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from PIL import Image
from scipy import ndimage

from .graphcut import contrast_weights, mrf_energy, solve_binary_mrf
from .raster import to_luminance
from .superpixels import slic_superpixels

RELIABILITY_EPS = 1e-5
ALPHA = 0.5

_FOUR = ndimage.generate_binary_structure(2, 1)


@dataclass
class VariationMaps:
    dx: np.ndarray
    dy: np.ndarray
    lx: np.ndarray
    ly: np.ndarray
    window_sigma: float


@dataclass
class ThresholdResult:
    threshold: float
    mask: np.ndarray
    history: list[float]
    alpha: float = ALPHA
    eps_conv: float = 1e-4
    degenerate: bool = False

    @property
    def iterations(self) -> int:
        return len(self.history) - 1


@dataclass
class Region:
    id: int
    area: int
    bbox: tuple[int, int, int, int]  # x, y, w, h


@dataclass
class RegionPartition:
    """Label 0 is the (possibly disconnected) NT-region, k >= 1 the k-th T-region."""

    labels: np.ndarray
    regions: list[Region] = field(default_factory=list)
    threshold: float | None = None

    @property
    def shape(self):
        return self.labels.shape

    @property
    def texture_mask(self) -> np.ndarray:
        return self.labels > 0

    @property
    def texture_fraction(self) -> float:
        return float(self.texture_mask.mean())

    def to_json(self) -> dict:
        return {
            "regions": [{"id": r.id, "area": r.area, "bbox": list(r.bbox)} for r in self.regions],
            "threshold": self.threshold,
        }

    def save(self, png_path, json_path) -> None:
        lab = self.labels
        if lab.max() > 255:
            raise ValueError("too many regions for an indexed PNG")
        im = Image.fromarray(lab.astype(np.uint8), mode="P")
        palette = [0, 0, 0]
        rng = np.random.default_rng(7)
        for _ in range(255):
            palette.extend(int(v) for v in rng.integers(64, 256, 3))
        im.putpalette(palette)
        im.save(str(png_path), format="PNG")
        with open(json_path, "w") as fh:
            json.dump(self.to_json(), fh, indent=2)

    @classmethod
    def from_labels(cls, labels, threshold=None) -> "RegionPartition":
        labels = np.asarray(labels, dtype=np.int64)
        regions = []
        for k, sl in enumerate(ndimage.find_objects(labels), start=1):
            if sl is None:
                continue
            area = int((labels[sl] == k).sum())
            y, x = sl[0].start, sl[1].start
            regions.append(Region(k, area, (x, y, sl[1].stop - x, sl[0].stop - y)))
        return cls(labels, regions, threshold)


def gaussian_window(sigma: float) -> np.ndarray:
    radius = int(math.ceil(2.0 * sigma))
    t = np.arange(-radius, radius + 1, dtype=np.float64)
    g = np.exp(-(t * t) / (2.0 * sigma * sigma))
    return g / g.sum()


def forward_gradients(lum: np.ndarray):
    """Forward differences with clamp-to-edge (zero on the last column/row)."""
    gx = np.zeros_like(lum)
    gy = np.zeros_like(lum)
    gx[:, :-1] = lum[:, 1:] - lum[:, :-1]
    gy[:-1, :] = lum[1:, :] - lum[:-1, :]
    return gx, gy


def gaussian_window_sum(f: np.ndarray, sigma: float) -> np.ndarray:
    g = gaussian_window(sigma)
    out = ndimage.correlate1d(f, g, axis=0, mode="nearest")
    return ndimage.correlate1d(out, g, axis=1, mode="nearest")


def windowed_variations(lum: np.ndarray, sigma: float = 3.0) -> VariationMaps:
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    lum = np.asarray(lum, dtype=np.float64)
    gx, gy = forward_gradients(lum)
    dx = gaussian_window_sum(np.abs(gx), sigma)
    dy = gaussian_window_sum(np.abs(gy), sigma)
    lx = np.abs(gaussian_window_sum(gx, sigma))
    ly = np.abs(gaussian_window_sum(gy, sigma))
    # the windowed signed sum can exceed the absolute sum by rounding only
    return VariationMaps(dx, dy, np.minimum(lx, dx), np.minimum(ly, dy), sigma)


def texture_reliability(v: VariationMaps, eps: float = RELIABILITY_EPS) -> np.ndarray:
    return v.dx / (v.lx + eps) + v.dy / (v.ly + eps)


def iterative_threshold(
    R: np.ndarray, eps_conv: float = 1e-4, alpha: float = ALPHA, max_iter: int = 1000
) -> ThresholdResult:
    """Two-class mean split, iterated until the threshold moves by < ``eps_conv``.

    A constant field has no second class and yields an all-NT mask.
    """
    R = np.asarray(R, dtype=np.float64)
    if R.size == 0:
        raise ValueError("empty reliability field")
    rt = float(R.mean())
    history = [rt]
    while len(history) <= max_iter:
        tex = R >= rt
        n_t = int(tex.sum())
        if n_t == R.size:
            return ThresholdResult(rt, np.zeros(R.shape, bool), history, alpha, eps_conv, True)
        new = alpha * float(R[tex].mean()) + (1.0 - alpha) * float(R[~tex].mean())
        history.append(new)
        converged = abs(new - rt) < eps_conv
        rt = new
        if converged:
            break
    return ThresholdResult(rt, R >= rt, history, alpha, eps_conv)


def vote_superpixels(noisy: np.ndarray, segments: np.ndarray) -> np.ndarray:
    """A segment becomes texture when strictly more than half its pixels are."""
    seg = segments.ravel()
    n = int(seg.max()) + 1
    size = np.bincount(seg, minlength=n)
    tex = np.bincount(seg, weights=noisy.ravel().astype(np.float64), minlength=n)
    return (2 * tex > size)[segments]


def detection_costs(mask: np.ndarray, R: np.ndarray, threshold: float):
    """Unary costs (NT, T) from the voted mask and the reliability field."""
    if threshold > 0:
        p_r = np.clip(R / (2.0 * threshold), 0.02, 0.98)
    else:
        p_r = np.full(R.shape, 0.02)
    p = 0.5 * (mask.astype(np.float64) + p_r)
    return -np.log(1.0 - p), -np.log(p)


def graphcut_refine(
    r: np.ndarray,
    mask: np.ndarray,
    R: np.ndarray,
    threshold: float,
    weight: float = 8.0,
    sigma_c: float = 0.1,
) -> np.ndarray:
    cost0, cost1 = detection_costs(mask, R, threshold)
    wr, wd = contrast_weights(r, weight, sigma_c)
    return solve_binary_mrf(cost0, cost1, wr, wd)


def refine_energy(r, labels, mask, R, threshold, weight=8.0, sigma_c=0.1) -> float:
    cost0, cost1 = detection_costs(mask, R, threshold)
    wr, wd = contrast_weights(r, weight, sigma_c)
    return mrf_energy(labels, cost0, cost1, wr, wd)


def extract_regions(mask: np.ndarray, min_area: int, threshold=None) -> RegionPartition:
    comp, n = ndimage.label(mask, structure=_FOUR)
    sizes = np.bincount(comp.ravel(), minlength=n + 1)
    keep = sizes >= min_area
    keep[0] = False
    remap = np.zeros(n + 1, dtype=np.int64)
    remap[keep] = np.arange(1, int(keep.sum()) + 1)
    return RegionPartition.from_labels(remap[comp], threshold)


def vote_segment_count(n_pixels: int) -> int:
    return int(min(1500, max(100, n_pixels // 600)))


@dataclass
class Detection:
    partition: RegionPartition
    reliability: np.ndarray
    score: np.ndarray
    threshold: ThresholdResult
    segments: np.ndarray
    voted: np.ndarray
    refined: np.ndarray


def detect_textures(
    r: np.ndarray,
    sigma: float = 3.0,
    eps_conv: float = 1e-4,
    alpha: float = ALPHA,
    slic_k: int | None = None,
    compactness: float = 10.0,
    gc_weight: float = 8.0,
    gc_sigma: float = 0.1,
    min_area_frac: float = 0.005,
    reliability_eps: float = RELIABILITY_EPS,
) -> Detection:
    h, w = r.shape[:2]
    R = texture_reliability(windowed_variations(to_luminance(r), sigma), reliability_eps)
    # R is heavy-tailed inside textures (L can cancel to ~0); split on a log scale
    score = np.log1p(R)
    th = iterative_threshold(score, eps_conv, alpha)
    k = min(slic_k or vote_segment_count(h * w), h * w)
    segments = slic_superpixels(r, k, compactness)
    voted = vote_superpixels(th.mask, segments)
    if th.degenerate:
        refined = np.zeros((h, w), bool)
    else:
        refined = graphcut_refine(r, voted, score, th.threshold, gc_weight, gc_sigma)
    min_area = max(1, int(math.ceil(min_area_frac * h * w)))
    part = extract_regions(refined, min_area, th.threshold)
    return Detection(part, R, score, th, segments, voted, refined)
