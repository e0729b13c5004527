import logging
import pandas as pd
from pathlib import Path
from typing import Dict, List

from ..errors import DomainError
from .rule import GradNormVector

log = logging.getLogger(__name__)

TRACE_COLUMNS = ["epoch", "layer", "grad_norm"]


class TraceGradNormSource:
    """Plays back recorded per-layer gradient norms from a CSV trace."""

    def __init__(self, path: str, layer_count: int):
        self.path = Path(path)
        self.layer_count = layer_count
        self._by_epoch = self._load()

    def _load(self) -> Dict[int, Dict[int, float]]:
        if not self.path.is_file():
            raise DomainError(f"gradient norm trace not found: {self.path}")

        frame = pd.read_csv(self.path)
        missing = [c for c in TRACE_COLUMNS if c not in frame.columns]
        if missing:
            raise DomainError(f"trace {self.path} lacks columns {missing}; header must be {','.join(TRACE_COLUMNS)}")
        if (frame["grad_norm"] < 0).any():
            raise DomainError(f"trace {self.path} contains negative gradient norms")

        by_epoch: Dict[int, Dict[int, float]] = {}
        for epoch, rows in frame.groupby("epoch", sort=True):
            by_epoch[int(epoch)] = {int(layer): float(norm) for layer, norm in zip(rows["layer"], rows["grad_norm"])}

        log.info(f"Loaded gradient norm trace {self.path}: {len(frame)} rows over {len(by_epoch)} epochs")
        return by_epoch

    def norms(self, timestep: int, epoch: int) -> GradNormVector:
        rows = self._by_epoch.get(epoch)
        if rows is None:
            raise DomainError(f"trace {self.path} has no rows for epoch {epoch}")

        values: List[float] = []
        for layer in range(self.layer_count):
            if layer not in rows:
                raise DomainError(f"trace {self.path} is missing layer {layer} in epoch {epoch}")
            values.append(rows[layer])
        return GradNormVector(timestep=timestep, values=values)
