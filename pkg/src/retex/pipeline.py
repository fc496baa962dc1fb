"""End-to-end orchestration with optional stage-artifact dumping."""

from __future__ import annotations

import contextlib
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import PipelineConfig
from .merge import composite, grow_boundary, resynthesize_band
from .raster import check_raster, save_raster, save_scalar_field
from .retarget import OperationLog, map_partition, plan_multiop, replay_log
from .saliency import Significance, minmax_normalize, significance_map
from .smoothing import structure_smooth
from .synthesis import SynthesisResult, decide_whole_image, synthesize_region, write_energy_trace
from .texture import Detection, RegionPartition, detect_textures


class PipelineError(RuntimeError):
    exit_code = 4

    def __init__(self, stage: str, message: str):
        self.stage = stage
        super().__init__(f"[{stage}] {message}")


class InvariantError(PipelineError):
    exit_code = 4


class TargetError(PipelineError):
    exit_code = 3


@contextlib.contextmanager
def stage(name: str):
    try:
        yield
    except PipelineError:
        raise
    except (ValueError, RuntimeError, ArithmeticError, IndexError) as exc:
        raise PipelineError(name, f"{type(exc).__name__}: {exc}") from exc


def _require(cond: bool, where: str, what: str) -> None:
    if not cond:
        raise InvariantError(where, what)


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


class Artifacts:
    """Writes stage outputs into a run directory and keeps a checksum manifest."""

    def __init__(self, root):
        self.root = Path(root) if root is not None else None
        self.entries: list[dict] = []
        if self.root is not None:
            self.root.mkdir(parents=True, exist_ok=True)

    @property
    def enabled(self) -> bool:
        return self.root is not None

    def _record(self, stage_name: str, name: str) -> Path:
        path = self.root / name
        self.entries.append({"stage": stage_name, "file": name})
        return path

    def raster(self, stage_name, name, r):
        if self.enabled:
            save_raster(r, self._record(stage_name, name))

    def field(self, stage_name, name, f):
        if self.enabled:
            save_scalar_field(np.clip(f, 0.0, 1.0), self._record(stage_name, name))

    def json(self, stage_name, name, obj):
        if self.enabled:
            with open(self._record(stage_name, name), "w") as fh:
                json.dump(obj, fh, indent=2, sort_keys=True)

    def partition(self, stage_name, stem, part: RegionPartition):
        if self.enabled:
            png = self._record(stage_name, f"{stem}.png")
            js = self._record(stage_name, f"{stem}.json")
            part.save(png, js)

    def trace(self, stage_name, name, trace):
        if self.enabled:
            write_energy_trace(trace, self._record(stage_name, name))

    def write_manifest(self, command: str, input_path, cfg: PipelineConfig) -> Path | None:
        if not self.enabled:
            return None
        for e in self.entries:
            e["sha256"] = sha256_file(self.root / e["file"])
        manifest = {
            "command": command,
            "input": str(input_path),
            "input_sha256": sha256_file(input_path) if input_path and Path(input_path).exists() else None,
            "config": cfg.to_json(),
            "artifacts": self.entries,
        }
        path = self.root / "manifest.json"
        with open(path, "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
        return path


def run_detect(img, cfg: PipelineConfig, art: Artifacts | None = None) -> Detection:
    art = art or Artifacts(None)
    with stage("detect"):
        det = detect_textures(
            img,
            sigma=cfg.window_sigma,
            eps_conv=cfg.eps_conv,
            alpha=cfg.alpha,
            slic_k=cfg.slic_k or None,
            compactness=cfg.compactness,
            gc_weight=cfg.gc_weight,
            gc_sigma=cfg.gc_sigma,
            min_area_frac=cfg.min_area_frac,
            reliability_eps=cfg.reliability_eps,
        )
    _require(det.partition.shape == img.shape[:2], "detect", "partition does not match the input size")
    art.partition("detect", "partition", det.partition)
    art.field("detect", "reliability.png", minmax_normalize(det.score))
    art.json(
        "detect",
        "threshold.json",
        {"threshold": det.threshold.threshold, "iterations": det.threshold.iterations, "history": det.threshold.history},
    )
    return det


def run_saliency(img, partition: RegionPartition, cfg: PipelineConfig, art: Artifacts | None = None) -> Significance:
    art = art or Artifacts(None)
    with stage("saliency"):
        sig = significance_map(img, partition, cfg.saliency_config(), cfg.gabor_bank())
    s = sig.significance
    _require(s.shape == img.shape[:2], "saliency", "significance map does not match the input size")
    _require(bool(np.all((s >= 0) & (s <= 1))), "saliency", "significance outside [0, 1]")
    art.field("saliency", "significance.png", s)
    art.field("saliency", "texture_saliency.png", sig.texture.refined)
    art.field("saliency", "base_saliency.png", sig.base)
    for M, m in zip(cfg.saliency_scales, sig.texture.scale_maps):
        art.field("saliency", f"saliency_scale{M}.png", minmax_normalize(m))
    art.json(
        "saliency",
        "saliency.json",
        {
            "base_mode": sig.base_mode,
            "nt_fraction": 1.0 - partition.texture_fraction,
            "scales": list(cfg.saliency_scales),
            "scale_ranges": [[float(m.min()), float(m.max())] for m in sig.texture.scale_maps],
        },
    )
    return sig


@dataclass
class RetargetResult:
    image: np.ndarray
    detection: Detection
    significance: Significance
    smoothed: np.ndarray
    log: OperationLog
    multiop: np.ndarray
    mapped: RegionPartition
    whole_image: bool = False
    synthesis: dict = field(default_factory=dict)  # name -> SynthesisResult
    band: np.ndarray | None = None


def _synthesize_regions(original, nt_base, partition, mapped, cfg: PipelineConfig, art: Artifacts):
    scfg = cfg.synthesis_config()
    results: dict[str, SynthesisResult] = {}
    pieces = []
    for reg in partition.regions:
        k = reg.id
        full = nt_base.copy()
        out_mask = mapped.labels == k
        while len(pieces) < k - 1:
            pieces.append(nt_base)
        if not out_mask.any():
            pieces.append(full)
            continue
        x, y, w, h = reg.bbox
        ex = original[y : y + h, x : x + w]
        ex_mask = partition.labels[y : y + h, x : x + w] == k
        ys, xs = np.nonzero(out_mask)
        y0, y1, x0, x1 = ys.min(), ys.max() + 1, xs.min(), xs.max() + 1
        res = synthesize_region(ex, nt_base[y0:y1, x0:x1], scfg, ex_mask, out_mask[y0:y1, x0:x1])
        full[y0:y1, x0:x1] = res.image
        pieces.append(full)
        results[f"region{k}"] = res
        art.trace("synthesis", f"energy_region{k}.csv", res.trace)
    return pieces, results


def retarget(img, target, cfg: PipelineConfig | None = None, art: Artifacts | None = None) -> RetargetResult:
    """Detect, score, plan, replay, synthesize T-regions and repair their seams."""
    cfg = cfg or PipelineConfig()
    art = art or Artifacts(None)
    img = check_raster(img)
    tw, th = target
    if tw < 16 or th < 16:
        raise TargetError("plan", f"target {tw}x{th} is below the 16x16 minimum")

    det = run_detect(img, cfg, art)
    part = det.partition
    sig = run_saliency(img, part, cfg, art)

    with stage("smooth"):
        smoothed = structure_smooth(img, cfg.window_sigma, cfg.rtv_iterations, cfg.rtv_lambda)
    art.raster("smooth", "smoothed.png", smoothed)

    with stage("plan"):
        log = plan_multiop(smoothed, sig.significance, tw, th, batch=cfg.multiop_batch, patch=cfg.patch_size)
    _require(log.final_dims() == (tw, th), "plan", "operation log does not reach the target")
    art.json("plan", "oplog.json", log.to_json())

    with stage("replay"):
        nt_base = replay_log(img, log)
        mapped = map_partition(part, log)
    _require(nt_base.shape == (th, tw, 3), "replay", f"replayed raster is {nt_base.shape[1]}x{nt_base.shape[0]}")
    _require(mapped.shape == (th, tw), "replay", "mapped partition does not match the target")
    art.raster("replay", "multiop.png", nt_base)
    art.partition("replay", "partition_mapped", mapped)

    result = RetargetResult(nt_base, det, sig, smoothed, log, nt_base, mapped)
    if not cfg.synthesis or not part.regions:
        art.raster("final", "final.png", nt_base)
        return result

    with stage("synthesis"):
        if decide_whole_image(part, cfg.whole_image_threshold):
            result.whole_image = True
            res = synthesize_region(img, nt_base, cfg.synthesis_config())
            result.synthesis["whole"] = res
            art.trace("synthesis", "energy_whole.csv", res.trace)
            final = res.image
        else:
            pieces, result.synthesis = _synthesize_regions(img, nt_base, part, mapped, cfg, art)
            merged = composite(nt_base, pieces, mapped.labels)
            art.raster("merge", "composite.png", merged)
            final = merged
            band = grow_boundary(mapped.labels, cfg.band_radius)
            result.band = band
            if band.any():
                art.field("merge", "band.png", band.astype(np.float64))
                rep = resynthesize_band(merged, band, img, cfg.synthesis_config(), cfg.band_iterations)
                result.synthesis["band"] = rep
                art.trace("merge", "energy_band.csv", rep.trace)
                _require(np.array_equal(rep.image[~band], merged[~band]), "merge", "band repair changed pixels outside the band")
                final = rep.image
    _require(final.shape == (th, tw, 3), "synthesis", "synthesized raster does not match the target")
    _require(bool(np.all(np.isfinite(final))), "synthesis", "non-finite pixel values")
    result.image = final
    art.raster("final", "final.png", final)
    return result
