import logging
import math
from pydantic import BaseModel, Field
from typing import Dict, List, Optional, Tuple

from .errors import DomainError
from .schemas import CacheTierConfig, CostModel, ModelSpec

log = logging.getLogger(__name__)


class CacheDecision(BaseModel):
    """Outcome of profiling cache reads against recomputing the frozen prefix."""

    enable: bool
    read_time: float
    forward_time: float


class CacheTransitionCost(BaseModel):
    """Per-sample cost of moving the cached boundary."""

    read_s: float = 0.0
    forward_s: float = 0.0
    write_s: float = 0.0

    @property
    def total(self) -> float:
        return self.read_s + self.forward_s + self.write_s


class CacheState(BaseModel):
    """
    Shared activation store of one run.

    `boundary` is the layer index whose input activations are stored (None before the
    first write). `presence` counts cached samples per active rank.
    """

    enabled: bool = False
    boundary: Optional[int] = None
    presence: Dict[int, int] = Field(default_factory=dict)
    window_batches: int = 1
    block_size: int = 1
    tier: CacheTierConfig = Field(default_factory=CacheTierConfig)
    forward_layers_charged: int = Field(
        default=0,
        description="Frozen layer forwards run per sample on behalf of the cache over the run."
    )

    model_config = {"frozen": True}

    @classmethod
    def initial(cls, tier: CacheTierConfig) -> 'CacheState':
        return cls(tier=tier, block_size=tier.block_size, window_batches=tier.block_size)

    def enable(self, batch_bytes: float, boundary: Optional[int] = None) -> 'CacheState':
        window = max(self.block_size, int(self.tier.host_capacity // max(batch_bytes, 1.0)))
        return self.model_copy(update={"enabled": True, "boundary": boundary, "window_batches": window})

    def check_invariants(self, L_frozen: int) -> None:
        if self.boundary is not None and self.boundary > L_frozen:
            raise DomainError(f"cached boundary {self.boundary} is past the frozen prefix {L_frozen}")
        if not self.window_batches >= self.block_size >= 1:
            raise DomainError(f"window of {self.window_batches} batches is smaller than block size {self.block_size}")


def frozen_forward_time(model: ModelSpec, cost_model: CostModel, start: int, end: int, samples: float) -> float:
    """Forward-only cost of frozen layers [start, end) for `samples` samples."""
    return cost_model.frozen_forward_ratio * cost_model.c_fwd * model.range_params(start, end) * samples


def activation_io_time(model: ModelSpec, boundary: int, samples: float, tier: CacheTierConfig) -> float:
    return model.activation_bytes_per_sample[boundary] * samples / tier.host_bandwidth


def should_cache(L_frozen: int, model: ModelSpec, cost_model: CostModel, batch: float,
                 tier: Optional[CacheTierConfig] = None) -> CacheDecision:
    """Enables the cache iff reading the boundary activations beats recomputing layers [0, L_frozen)."""
    tier = tier or CacheTierConfig()
    forward = frozen_forward_time(model, cost_model, 0, L_frozen, batch)
    read = activation_io_time(model, L_frozen, batch, tier) + tier.read_latency
    return CacheDecision(enable=L_frozen > 0 and read < forward, read_time=read, forward_time=forward)


def enable_threshold(model: ModelSpec, cost_model: CostModel, tier: Optional[CacheTierConfig] = None,
                     batch: float = 1.0) -> Optional[int]:
    """Smallest frozen prefix at which should_cache enables, or None."""
    for L_frozen in range(1, model.layer_count + 1):
        if should_cache(L_frozen, model, cost_model, batch, tier).enable:
            return L_frozen
    return None


def cache_transition(state: CacheState, old_boundary: int, new_boundary: int, model: ModelSpec,
                     cost_model: CostModel) -> Tuple[CacheState, CacheTransitionCost]:
    """
    Moves the cached boundary forward without running any frozen layer twice.

    Every sample reads the stored activations at old_boundary, runs the frozen forward of
    layers [old_boundary, new_boundary) and writes the activations at new_boundary. Nothing
    is read when nothing was stored before.
    """
    if new_boundary < old_boundary:
        raise DomainError(f"cache boundary cannot move backwards ({old_boundary} -> {new_boundary})")
    if new_boundary > model.layer_count:
        raise DomainError(f"cache boundary {new_boundary} outside [0, {model.layer_count}]")

    stored = state.enabled and state.boundary is not None
    if stored and new_boundary == old_boundary:
        return state, CacheTransitionCost()

    tier = state.tier
    cost = CacheTransitionCost(
        read_s=activation_io_time(model, old_boundary, 1.0, tier) + tier.read_latency if stored else 0.0,
        forward_s=frozen_forward_time(model, cost_model, old_boundary, new_boundary, 1.0),
        write_s=activation_io_time(model, new_boundary, 1.0, tier),
    )
    new_state = state.model_copy(update={
        "enabled": True,
        "boundary": new_boundary,
        "forward_layers_charged": state.forward_layers_charged + (new_boundary - old_boundary),
    })
    log.info(f"Cache boundary {old_boundary if stored else '-'} -> {new_boundary}: "
             f"{cost.total * 1e6:.1f} us/sample (read {cost.read_s * 1e6:.1f}, forward {cost.forward_s * 1e6:.1f}, write {cost.write_s * 1e6:.1f})")
    return new_state, cost


# Host/disk tier

class WindowStep(BaseModel):
    """Tier actions triggered by demanding one batch."""

    batch_index: int
    prefetch: List[int] = Field(default_factory=list)
    evict: List[int] = Field(default_factory=list)
    stall: float = 0.0


class TierEpochResult(BaseModel):
    stall_time: float = 0.0
    disk_bytes: float = 0.0
    prefetched_blocks: int = 0
    evicted_blocks: int = 0
    max_resident_bytes: float = 0.0


class HostTierWindow:
    """
    Sliding window of cached batches over one epoch of one node.

    The host tier holds at most `window_blocks` blocks of `block_size` batches. The first
    blocks are resident when the epoch starts; once a block has been consumed it is
    evicted and the next missing block is prefetched from disk on a single serialized
    disk track. A batch whose block has not arrived yet stalls consumption.
    """

    def __init__(self, tier: CacheTierConfig, batch_bytes: float, total_batches: int):
        if batch_bytes <= 0:
            raise DomainError("batch_bytes must be > 0")
        self.tier = tier
        self.batch_bytes = batch_bytes
        self.total_batches = total_batches
        self.block_size = tier.block_size
        self.block_bytes = batch_bytes * tier.block_size
        self.total_blocks = math.ceil(total_batches / tier.block_size) if total_batches > 0 else 0

        window_batches = int(tier.host_capacity // batch_bytes)
        self.window_blocks = window_batches // tier.block_size
        if self.window_blocks < 1 and self.total_blocks > 0:
            raise DomainError(f"host capacity {tier.host_capacity:.3g} B cannot hold one block of {self.block_bytes:.3g} B")

        resident = min(self.window_blocks, self.total_blocks)
        self.resident: List[int] = list(range(resident))
        self.ready: Dict[int, float] = {block: 0.0 for block in self.resident}
        self.next_block = resident
        self.disk_free = 0.0
        self.current_block = 0
        self.result = TierEpochResult(max_resident_bytes=self._resident_bytes())

    @property
    def fits(self) -> bool:
        return self.window_blocks >= self.total_blocks

    def _resident_bytes(self) -> float:
        return sum(self._block_bytes(block) for block in self.resident)

    def _block_bytes(self, block: int) -> float:
        batches = min(self.block_size, self.total_batches - block * self.block_size)
        return batches * self.batch_bytes

    def advance(self, batch_index: int, now: float) -> WindowStep:
        """Demands `batch_index` at time `now`; returns tier actions and the stall incurred."""
        if batch_index >= self.total_batches:
            raise DomainError(f"batch {batch_index} beyond the epoch's {self.total_batches} batches")
        block = batch_index // self.block_size
        step = WindowStep(batch_index=batch_index)

        while self.current_block < block:
            consumed = self.current_block
            self.current_block += 1
            if consumed in self.resident and not self.fits:
                self.resident.remove(consumed)
                step.evict.append(consumed)
                self.result.evicted_blocks += 1
            if self.next_block < self.total_blocks and len(self.resident) < self.window_blocks:
                fetched = self.next_block
                self.next_block += 1
                start = max(self.disk_free, now)
                self.disk_free = start + self._block_bytes(fetched) / self.tier.disk_bandwidth
                self.ready[fetched] = self.disk_free
                self.resident.append(fetched)
                step.prefetch.append(fetched)
                self.result.prefetched_blocks += 1
                self.result.disk_bytes += self._block_bytes(fetched)
            self.result.max_resident_bytes = max(self.result.max_resident_bytes, self._resident_bytes())

        if self._resident_bytes() > self.tier.host_capacity:
            raise DomainError("host tier over capacity")

        ready = self.ready.get(block)
        if ready is None:
            raise DomainError(f"block {block} was never scheduled for prefetch")
        step.stall = max(0.0, ready - now)
        self.result.stall_time += step.stall
        return step


def window_advance(window: HostTierWindow, next_batch_index: int, now: float) -> WindowStep:
    return window.advance(next_batch_index, now)


def simulate_tier_epoch(tier: CacheTierConfig, batch_bytes: float, iterations: float,
                        batches_per_iteration: int, iteration_time: float) -> TierEpochResult:
    """
    Replays one epoch of cache reads on one node.

    Every iteration consumes `batches_per_iteration` batches (one per active rank on the
    node); stalls delay every later demand.
    """
    total_batches = math.ceil(iterations) * batches_per_iteration
    window = HostTierWindow(tier, batch_bytes, total_batches)
    if window.fits:
        return window.result

    delay = 0.0
    for batch in range(total_batches):
        now = (batch // batches_per_iteration) * iteration_time + delay
        delay += window_advance(window, batch, now).stall

    log.debug(f"Tier epoch: {window.result.prefetched_blocks} prefetches, stall {window.result.stall_time:.3f}s")
    return window.result
