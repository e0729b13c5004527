import logging
import math
from pydantic import BaseModel, Field, field_validator
from typing import List

from ..errors import DomainError

log = logging.getLogger(__name__)

# Absorbs binary rounding of alpha (e.g. 1/3 * 12) before flooring the bound.
FLOOR_TOLERANCE = 1e-9


class GradNormVector(BaseModel):
    """Per-layer gradient norms observed for one freeze timestep."""

    timestep: int = Field(default=..., description="Freeze timestep T. (e.g., 1)")
    values: List[float] = Field(default=..., description="One norm per layer, bottom layer first. (e.g., [1.9, 1.7, 1.2])")

    model_config = {"frozen": True}

    @field_validator('values')
    @classmethod
    def norms_non_negative(cls, v: List[float]) -> List[float]:
        if any(not x >= 0 for x in v):
            raise ValueError('gradient norms must be non-negative')
        return v


class FreezeRecord(BaseModel):
    timestep: int
    frozen_count: int
    raw_bound: float

    model_config = {"frozen": True}


class FreezeState(BaseModel):
    """Frozen-layer trajectory; history[0] is always (T=0, 0 layers)."""

    alpha: float
    history: List[FreezeRecord] = Field(
        default_factory=lambda: [FreezeRecord(timestep=0, frozen_count=0, raw_bound=0.0)]
    )

    @field_validator('alpha')
    @classmethod
    def alpha_in_open_unit_interval(cls, v: float) -> float:
        if not 0.0 < v < 1.0:
            raise DomainError(f"alpha={v} outside (0, 1)")
        return v

    @property
    def last(self) -> FreezeRecord:
        return self.history[-1]

    @property
    def frozen_count(self) -> int:
        return self.last.frozen_count

    @property
    def trajectory(self) -> List[int]:
        return [r.frozen_count for r in self.history]


def _floor(value: float) -> int:
    return int(math.floor(value + FLOOR_TOLERANCE))


def next_frozen_count(state: FreezeState, norms: GradNormVector, L: int) -> int:
    """
    Evaluates one freeze step and appends it to the state history.

    bound = prev + alpha * (L - prev) is built from the previously published count and kept
    real-valued until the min(). The candidate is the lowest-index minimum-norm layer among
    the still-active layers; the published count is floor(min(bound, candidate)) and never
    moves backwards. `raw_bound` records the unfloored min().
    """
    if len(norms.values) != L:
        raise DomainError(f"gradient norm vector has {len(norms.values)} entries, expected L={L}")

    previous = state.last
    active_from = previous.frozen_count
    bound = active_from + state.alpha * (L - active_from)

    if active_from >= L:
        candidate = float(L)
    else:
        active = norms.values[active_from:]
        # min() returns the first occurrence, i.e. ties go to the smallest index
        candidate = float(active_from + active.index(min(active)))

    raw = min(bound, candidate)
    frozen = max(previous.frozen_count, min(_floor(raw), L))

    state.history.append(FreezeRecord(timestep=previous.timestep + 1, frozen_count=frozen, raw_bound=raw))
    log.debug(f"Freeze T={previous.timestep + 1}: bound={bound:.4f}, argmin={int(candidate)}, frozen={frozen}")
    return frozen


def frozen_bound_closed_form(T: int, L: int, alpha: float) -> float:
    """(1-a)^T [ aL/(1-a) + sum_{t=2..T} aL/(1-a)^t ]"""
    if not 0.0 < alpha < 1.0:
        raise DomainError(f"alpha={alpha} outside (0, 1)")
    if T < 1:
        raise DomainError(f"timestep T={T} must be >= 1")

    keep = 1.0 - alpha
    total = alpha * L / keep
    for t in range(2, T + 1):
        total += alpha * L / keep ** t
    return keep ** T * total


def frozen_bound_recurrence(T: int, L: int, alpha: float) -> float:
    """L^(T) = aL + (1-a) L^(T-1) with L^(0) = 0."""
    if not 0.0 < alpha < 1.0:
        raise DomainError(f"alpha={alpha} outside (0, 1)")
    value = 0.0
    for _ in range(T):
        value = alpha * L + (1.0 - alpha) * value
    return value
