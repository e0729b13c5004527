import logging
from pathlib import Path
from typing import Optional

from ..schemas import GradNormSourceSpec
from .base import GradNormSource
from .rule import (
    FreezeRecord,
    FreezeState,
    GradNormVector,
    frozen_bound_closed_form,
    frozen_bound_recurrence,
    next_frozen_count,
)
from .synthetic_source import SyntheticGradNormSource
from .trace_source import TraceGradNormSource

log = logging.getLogger(__name__)

__all__ = [
    "FreezeRecord", "FreezeState", "GradNormSource", "GradNormVector",
    "SyntheticGradNormSource", "TraceGradNormSource",
    "frozen_bound_closed_form", "frozen_bound_recurrence", "get_grad_norm_source", "next_frozen_count",
]


def get_grad_norm_source(spec: GradNormSourceSpec, layer_count: int, seed: int = 0,
                         base_dir: Optional[Path] = None) -> GradNormSource:
    """
    Factory returning the gradient-norm source selected by the scenario.

    Trace paths are resolved relative to `base_dir` (the config file's directory).
    The synthetic seed falls back to the scenario seed.
    """
    if spec.kind == "trace":
        path = Path(spec.trace_path or "")
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        log.info(f"Initializing TraceGradNormSource from {path}.")
        return TraceGradNormSource(str(path), layer_count)

    synthetic_seed = spec.seed if spec.seed is not None else seed
    log.info(f"Initializing SyntheticGradNormSource (profile={spec.profile}, seed={synthetic_seed}).")
    return SyntheticGradNormSource(
        layer_count,
        profile=spec.profile,
        seed=synthetic_seed,
        switchover=spec.switchover,
        scale=spec.scale,
        decay=spec.decay,
    )
