"""Zero-mean complex Gabor filter bank (4 frequencies x 6 orientations)."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import fftconvolve

from .raster import to_luminance

FREQUENCIES = (1 / 4, 1 / 8, 1 / 16, 1 / 32)
N_ORIENTATIONS = 6


@dataclass(frozen=True)
class GaborBank:
    frequencies: tuple = FREQUENCIES
    n_orientations: int = N_ORIENTATIONS
    envelope: float = 0.56  # sigma * frequency

    @property
    def orientations(self) -> tuple:
        return tuple(k * math.pi / self.n_orientations for k in range(self.n_orientations))

    @property
    def size(self) -> int:
        return len(self.frequencies) * self.n_orientations

    def kernels(self) -> list[np.ndarray]:
        """Kernels ordered frequency-major: index = f_idx * n_orientations + o_idx."""
        return [gabor_kernel(f, th, self.envelope / f) for f in self.frequencies for th in self.orientations]


def gabor_kernel(frequency: float, theta: float, sigma: float) -> np.ndarray:
    radius = int(math.ceil(3.0 * sigma))
    y, x = np.mgrid[-radius : radius + 1, -radius : radius + 1].astype(np.float64)
    env = np.exp(-(x * x + y * y) / (2.0 * sigma * sigma))
    carrier = np.exp(2j * math.pi * frequency * (x * math.cos(theta) + y * math.sin(theta)))
    # Morlet-style DC correction: subtract the envelope-weighted carrier mean
    kappa = (env * carrier).sum() / env.sum()
    k = env * (carrier - kappa)
    return k / env.sum()


def gabor_features(r: np.ndarray, bank: GaborBank | None = None) -> np.ndarray:
    """Magnitude responses on luminance, shape (H, W, 24), clamp-to-edge borders."""
    bank = bank or GaborBank()
    lum = to_luminance(r)
    # responses are shift-invariant, so remove the mean to keep round-off proportional to contrast
    lum = lum - lum.mean()
    h, w = lum.shape
    out = np.empty((h, w, bank.size))
    for i, k in enumerate(bank.kernels()):
        rad = k.shape[0] // 2
        padded = np.pad(lum, rad, mode="edge")
        out[..., i] = np.abs(fftconvolve(padded, k, mode="valid"))
    return out
