"""Texture-aware image retargeting."""

import numba as _numba

# the TBB layer is unavailable in many environments; pick a layer that always works
_numba.config.THREADING_LAYER = "workqueue"

from .config import ConfigError, PipelineConfig  # noqa: E402
from .pipeline import retarget, run_detect, run_saliency  # noqa: E402

__all__ = ["ConfigError", "PipelineConfig", "retarget", "run_detect", "run_saliency"]
__version__ = "0.1.0"
