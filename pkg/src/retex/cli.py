"""Command-line entry point: ``retex detect|saliency|retarget``."""

from __future__ import annotations

import argparse
import re
import sys
from pathlib import Path

from .config import ConfigError, PipelineConfig
from .pipeline import Artifacts, PipelineError, retarget, run_detect, run_saliency
from .raster import RasterIOError, load_raster

EXIT_OK, EXIT_INPUT, EXIT_CONFIG, EXIT_INVARIANT = 0, 2, 3, 4


def parse_target(text: str) -> tuple[int, int]:
    m = re.fullmatch(r"\s*(\d+)\s*[xX]\s*(\d+)\s*", text or "")
    if not m:
        raise ConfigError(f"target must look like WxH, got {text!r}")
    w, h = int(m.group(1)), int(m.group(2))
    if w < 16 or h < 16:
        raise ConfigError(f"target {w}x{h} is below the 16x16 minimum")
    return w, h


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="retex", description="Texture-aware content-aware image retargeting.")
    p.add_argument("command", choices=["detect", "saliency", "retarget"])
    p.add_argument("input", metavar="INPUT", help="PNG or JPEG image")
    p.add_argument("--target", metavar="WxH", help="output size (retarget only)")
    p.add_argument("--config", metavar="FILE", help="flat JSON of configuration fields")
    p.add_argument("--threads", type=int, metavar="N", help="cap on worker threads")
    p.add_argument("--no-synthesis", action="store_true", help="stop after multi-operator resizing")
    p.add_argument("--dump-dir", metavar="PATH", help="run directory (default: ./retex-run-<input stem>)")
    return p


def resolve_config(args) -> PipelineConfig:
    cfg = PipelineConfig()
    if args.config:
        cfg = PipelineConfig.from_file(args.config, cfg)
    overrides = {}
    if args.threads is not None:
        overrides["threads"] = args.threads
    if args.no_synthesis:
        overrides["synthesis"] = False
    return PipelineConfig.from_mapping(overrides, cfg) if overrides else cfg


def _set_threads(n: int) -> None:
    if n:
        import numba

        numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        target = parse_target(args.target) if args.command == "retarget" else None
        if args.command != "retarget" and args.target:
            raise ConfigError("--target only applies to retarget")
    except ConfigError as exc:
        print(f"retex: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    _set_threads(cfg.threads)

    try:
        img = load_raster(args.input)
    except RasterIOError as exc:
        print(f"retex: input error: {exc}", file=sys.stderr)
        return EXIT_INPUT

    dump = Path(args.dump_dir) if args.dump_dir else Path(f"retex-run-{Path(args.input).stem}")
    art = Artifacts(dump)
    try:
        if args.command == "detect":
            det = run_detect(img, cfg, art)
            print(f"{len(det.partition.regions)} texture region(s), {det.partition.texture_fraction:.1%} of pixels")
        elif args.command == "saliency":
            det = run_detect(img, cfg, art)
            sig = run_saliency(img, det.partition, cfg, art)
            print(f"significance map written; base mode {sig.base_mode}")
        else:
            res = retarget(img, target, cfg, art)
            counts = res.log.counts()
            mode = "whole image" if res.whole_image else f"{len(res.synthesis)} synthesis job(s)"
            print(f"{target[0]}x{target[1]}: {counts['seam']} seam, {counts['scale']} scale, {counts['crop']} crop; {mode}")
    except PipelineError as exc:
        print(f"retex: {exc}", file=sys.stderr)
        return exc.exit_code
    art.write_manifest(args.command, args.input, cfg)
    print(f"artifacts in {dump}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
