"""Flat pipeline configuration: defaults < JSON file < command-line flags."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields

from .gabor import FREQUENCIES, N_ORIENTATIONS, GaborBank
from .saliency import SaliencyConfig
from .synthesis import SynthesisConfig


class ConfigError(ValueError):
    pass


@dataclass
class PipelineConfig:
    # texture detection
    window_sigma: float = 3.0
    reliability_eps: float = 1e-5
    alpha: float = 0.5
    eps_conv: float = 1e-4
    slic_k: int = 0  # 0: pixels / 600 clamped to [100, 1500]
    compactness: float = 10.0
    gc_weight: float = 8.0
    gc_sigma: float = 0.1
    min_area_frac: float = 0.005
    # saliency
    gabor_frequencies: list = field(default_factory=lambda: list(FREQUENCIES))
    gabor_orientations: int = N_ORIENTATIONS
    sigma_s_sq: float = 0.5
    location_lambda: float = 9.0
    sigma_refine: float = 30.0
    saliency_scales: list = field(default_factory=lambda: [100, 500, 1000])
    refine_neighbors: int = 32
    base_segments: int = 300
    nt_area_threshold: float = 0.30
    # structure smoothing and multi-operator planning
    rtv_lambda: float = 0.015
    rtv_iterations: int = 3
    multiop_batch: int = 5
    # synthesis
    patch_size: int = 8
    stride: int = 4
    exemplar_stride: int = 2
    omega_schedule: list = field(default_factory=lambda: [0.65, 0.25, 0.1])
    beta: float = 10.0
    em_iters_per_level: int = 20
    domain_fractions: list = field(default_factory=lambda: [1.0, 0.4, 0.2])
    whole_image_threshold: float = 0.70
    # boundary repair
    band_radius: int = 4
    band_iterations: int = 10
    # run control
    synthesis: bool = True
    threads: int = 0  # 0: numba default

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        positive = [
            "window_sigma", "reliability_eps", "eps_conv", "compactness", "gc_sigma", "sigma_s_sq",
            "location_lambda", "sigma_refine", "rtv_lambda", "nt_area_threshold",
        ]
        for name in positive:
            v = getattr(self, name)
            if not isinstance(v, (int, float)) or isinstance(v, bool) or not v > 0:
                raise ConfigError(f"{name} must be a positive number, got {v!r}")
        ints = {
            "slic_k": 0, "gabor_orientations": 1, "refine_neighbors": 1, "base_segments": 1, "rtv_iterations": 0,
            "multiop_batch": 1, "patch_size": 2, "stride": 1, "exemplar_stride": 1, "em_iters_per_level": 1,
            "band_radius": 1, "band_iterations": 1, "threads": 0,
        }
        for name, lo in ints.items():
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v < lo:
                raise ConfigError(f"{name} must be an integer >= {lo}, got {v!r}")
        if not 0 < self.alpha < 1:
            raise ConfigError(f"alpha must lie in (0, 1), got {self.alpha}")
        if not 0 <= self.min_area_frac < 1 or not 0 <= self.whole_image_threshold <= 1:
            raise ConfigError("area fractions must lie in [0, 1)")
        if self.gc_weight < 0 or self.beta < 0:
            raise ConfigError("gc_weight and beta must be >= 0")
        if not isinstance(self.synthesis, bool):
            raise ConfigError("synthesis must be true or false")
        if not self.gabor_frequencies or any(not 0 < f <= 0.5 for f in self.gabor_frequencies):
            raise ConfigError("gabor_frequencies must be non-empty and within (0, 0.5]")
        try:
            self.saliency_config()
            self.synthesis_config()
        except (ValueError, TypeError) as exc:
            raise ConfigError(str(exc)) from exc

    def saliency_config(self) -> SaliencyConfig:
        return SaliencyConfig(
            sigma_s_sq=self.sigma_s_sq,
            lam=self.location_lambda,
            sigma_refine=self.sigma_refine,
            scales=tuple(self.saliency_scales),
            nt_area_threshold=self.nt_area_threshold,
            refine_neighbors=self.refine_neighbors,
            base_segments=self.base_segments,
            compactness=self.compactness,
        )

    def gabor_bank(self) -> GaborBank:
        return GaborBank(tuple(self.gabor_frequencies), self.gabor_orientations)

    def synthesis_config(self) -> SynthesisConfig:
        return SynthesisConfig(
            patch_size=self.patch_size,
            stride=self.stride,
            exemplar_stride=self.exemplar_stride,
            omega_schedule=tuple(self.omega_schedule),
            beta=self.beta,
            em_iters_per_level=self.em_iters_per_level,
            domain_fractions=tuple(self.domain_fractions),
            whole_image_threshold=self.whole_image_threshold,
            levels=len(self.omega_schedule),
        )

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_mapping(cls, data: dict, base: "PipelineConfig | None" = None) -> "PipelineConfig":
        if not isinstance(data, dict):
            raise ConfigError("configuration must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown configuration keys: {', '.join(unknown)}")
        merged = (base or cls()).to_json()
        merged.update(data)
        return cls(**merged)

    @classmethod
    def from_file(cls, path, base: "PipelineConfig | None" = None) -> "PipelineConfig":
        try:
            with open(path) as fh:
                data = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        return cls.from_mapping(data, base)
