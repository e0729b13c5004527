import logging
import math
from pathlib import Path
from pydantic import BaseModel
from typing import Dict, Iterable, List, Optional, Tuple

from ..autocache import CacheState, cache_transition, should_cache, simulate_tier_epoch
from ..autodp import SyncState, Topology, message_delivery_time, redistribute, transition
from ..autopipe import ChunkProfile, PartitionPlan, feasible_length, load_balance, optimal_chunks, try_compress
from ..core_model import m_partition
from ..freeze import FreezeState, get_grad_norm_source, next_frozen_count
from ..schemas import (
    CacheEvent,
    CostModel,
    EpochRow,
    FeatureFlags,
    RunReport,
    ScenarioConfig,
    TimelineRecord,
    TransitionLog,
)
from .schedule import IterationSchedule, schedule_iteration

log = logging.getLogger(__name__)

BASELINE_FLAGS = FeatureFlags(freeze=False, autopipe=False, autodp=False, autocache="off")

# A first enable costs the same work as recompute, summed in another order; ties go to the cache.
CACHE_TIE_TOLERANCE = 1e-12

BREAKDOWN_COMBOS: List[str] = [
    "baseline",
    "freeze_only",
    "autopipe",
    "autopipe+autodp",
    "autopipe+autocache",
    "all",
]


def transition_overhead(old_K: int, new_K: int, cost_model: CostModel) -> float:
    """Seconds charged for a pipe transformation; a multi-step jump pays every halving on the way."""
    seconds = 0.0
    K = old_K
    while K > new_K:
        key = f"{K}->{K // 2}"
        seconds += cost_model.transition_overheads.get(key, cost_model.default_transition_overhead)
        K //= 2
    return seconds


def initial_overhead(K: int, cost_model: CostModel) -> float:
    return cost_model.transition_overheads.get(f"init:{K}", cost_model.default_transition_overhead)


def epoch_dataset_size(config: ScenarioConfig) -> int:
    training = config.training
    if training.dataset_size is not None:
        return training.dataset_size
    R0 = config.cluster.world_size // config.initial_pipeline_length
    return training.iterations_per_epoch * R0 * training.per_pipeline_batch_size


class _ChunkCache:
    """Chunk profiles of one run keyed by everything the schedule depends on."""

    def __init__(self, config: ScenarioConfig):
        self.config = config
        self.profiles: Dict[Tuple, ChunkProfile] = {}

    def get(self, plan: PartitionPlan, topology: Topology, cache_state: Optional[CacheState]) -> ChunkProfile:
        cache_key = None
        if cache_state is not None and cache_state.enabled:
            cache_key = (cache_state.boundary,)
        key = (plan.K, tuple(plan.spans), plan.seq.frozen_layers, cache_key, topology.R)
        if key not in self.profiles:
            self.profiles[key] = optimal_chunks(
                plan.K, plan, self.config.cost_model, topology,
                self.config.training.per_pipeline_batch_size, cache_state,
            )
        return self.profiles[key]


class ElasticRun:
    """
    Epoch loop of one simulated training run.

    Per epoch: freeze decision, re-partitioning and compression, data-parallel transition,
    dataset redistribution, cache decision, chunk profiling and one representative
    iteration schedule.
    """

    def __init__(self, config: ScenarioConfig, flags: FeatureFlags, base_dir: Optional[Path] = None):
        self.config = config
        self.flags = flags
        self.base_dir = base_dir
        self.model = config.resolved_model()
        self.training = config.training
        self.cost_model = config.cost_model
        self.batch_size = config.training.per_pipeline_batch_size
        self.dataset_size = epoch_dataset_size(config)
        self.chunks = _ChunkCache(config)

        self.K = config.initial_pipeline_length
        self.topology = Topology.initial(config.cluster, self.K)
        self.freeze_state = FreezeState(alpha=config.training.alpha)
        self.L_frozen = 0
        self.plan = load_balance(m_partition(self.model, 0), self.K, self.training.lambda_frozen, config.partitioner)
        self.M_GPU_0 = self.plan.max_effective_size
        self.cache_state = CacheState.initial(config.cache)
        self.last_M = self.K

        self.rows: List[EpochRow] = []
        self.timeline: List[TimelineRecord] = []
        self.cache_events: List[CacheEvent] = []
        self.transitions: List[TransitionLog] = [
            TransitionLog(epoch=0, old_K=self.K, new_K=self.K, reason="init",
                          activated_ranks=list(self.topology.active_ranks), messages=[])
        ]

        self.source = None
        if flags.freeze:
            self.source = get_grad_norm_source(config.grad_norms, self.model.layer_count,
                                               seed=config.seed, base_dir=base_dir)

    # Per-epoch steps

    def _freeze_step(self, epoch: int) -> None:
        if not self.flags.freeze or epoch == 0 or epoch % self.training.freeze_check_interval != 0:
            return
        T = self.freeze_state.last.timestep + 1
        norms = self.source.norms(T, epoch - 1)
        L_new = next_frozen_count(self.freeze_state, norms, self.model.layer_count)
        if L_new != self.L_frozen:
            log.info(f"Epoch {epoch}: frozen layers {self.L_frozen} -> {L_new}")
        self.L_frozen = L_new

    def _pipeline_step(self, epoch: int, frozen_changed: bool) -> float:
        """Re-partitions the active layers; returns the transformation overhead charged."""
        if not self.flags.autopipe or not frozen_changed:
            return 0.0

        seq = m_partition(self.model, self.L_frozen)
        capacity_K = feasible_length(self.K, len(seq))
        new_K, self.plan = try_compress(seq, self.K, self.training.lambda_frozen, self.M_GPU_0,
                                        self.config.partitioner)
        if new_K == self.K:
            return 0.0

        old_K = self.K
        overhead = transition_overhead(old_K, new_K, self.cost_model)
        reason = "capacity" if capacity_K < old_K else "compress"
        log.info(f"Epoch {epoch}: pipeline compressed {old_K} -> {new_K} ({reason}), "
                 f"max effective size {self.plan.max_effective_size:,.0f} <= {self.M_GPU_0:,.0f}")

        activated: List[int] = []
        messages = []
        if self.flags.autodp:
            sync = SyncState(epoch=epoch, lr_step=len(self.rows), frozen_layers=self.L_frozen, weights_version=epoch)
            self.topology, messages = transition(self.topology, new_K, sync)
            activated = sorted(m.receiver for m in messages)
            overhead += message_delivery_time(messages, self.cost_model.message_latency)

        self.transitions.append(TransitionLog(
            epoch=epoch, old_K=old_K, new_K=new_K, reason=reason,
            activated_ranks=activated,
            messages=[m.model_dump(mode="json") for m in messages],
        ))
        self.K = new_K
        return overhead

    def _cache_view(self, epoch: int) -> Optional[CacheState]:
        """Cache state the schedule should charge this epoch, or None for recompute."""
        mode = self.flags.autocache
        if mode == "off":
            return None

        batch_bytes = self.model.activation_bytes_per_sample[self.L_frozen] * self.batch_size
        if mode == "forced":
            if not self.cache_state.enabled:
                self.cache_state = self.cache_state.enable(batch_bytes, boundary=0)
                self._emit_cache_event(epoch, "enable", 0.0, 0.0)
            return self.cache_state

        if self.L_frozen == 0:
            return None
        if not self.cache_state.enabled:
            decision = should_cache(self.L_frozen, self.model, self.cost_model,
                                    self.batch_size / self.last_M, self.config.cache)
            if not decision.enable:
                return None
            candidate = self.cache_state.enable(batch_bytes)
        else:
            candidate = self.cache_state

        with_cache = self.chunks.get(self.plan, self.topology, candidate)
        recompute = self.chunks.get(self.plan, self.topology, None)
        if with_cache.best_time > recompute.best_time * (1.0 + CACHE_TIE_TOLERANCE):
            log.debug(f"Epoch {epoch}: cache path {with_cache.best_time:.4f}s slower than recompute {recompute.best_time:.4f}s")
            return None

        if not self.cache_state.enabled:
            log.info(f"Epoch {epoch}: enabling activation cache at {self.L_frozen} frozen layers")
            self._emit_cache_event(epoch, "enable", 0.0, 0.0)
        self.cache_state = candidate
        return self.cache_state

    def _emit_cache_event(self, epoch: int, event: str, num_bytes: float, duration: float) -> None:
        self.cache_events.append(CacheEvent(epoch=epoch, event=event, bytes=num_bytes, duration=duration))

    def _advance_cache(self, epoch: int, samples_per_node: float) -> None:
        old = self.cache_state.boundary if self.cache_state.boundary is not None else 0
        self.cache_state, cost = cache_transition(self.cache_state, old, self.L_frozen, self.model, self.cost_model)
        if cost.total > 0:
            write_bytes = self.model.activation_bytes_per_sample[self.L_frozen] * samples_per_node
            self._emit_cache_event(epoch, "transition", write_bytes, cost.total * samples_per_node)

    def _tier_stall(self, epoch: int, iterations: float, iteration_time: float) -> float:
        ranks_per_node = self.topology.R // self.config.cluster.node_count
        batch_bytes = self.model.activation_bytes_per_sample[self.cache_state.boundary or 0] * self.batch_size
        result = simulate_tier_epoch(self.config.cache, batch_bytes, iterations, ranks_per_node, iteration_time)
        if result.prefetched_blocks:
            self._emit_cache_event(epoch, "prefetch", result.disk_bytes, result.disk_bytes / self.config.cache.disk_bandwidth)
            self._emit_cache_event(epoch, "evict", result.evicted_blocks * batch_bytes * self.config.cache.block_size, 0.0)
        if result.stall_time > 0:
            self._emit_cache_event(epoch, "stall", 0.0, result.stall_time)
        return result.stall_time

    def _record_timeline(self, epoch: int, schedule: IterationSchedule) -> None:
        if not self.config.output.write_timeline:
            return
        for block in schedule.blocks:
            self.timeline.append(TimelineRecord(epoch=epoch, device=block.device, kind=block.kind,
                                                start_s=block.start_s, end_s=block.end_s, tag=block.tag))

    def run_epoch(self, epoch: int) -> EpochRow:
        overhead = initial_overhead(self.K, self.cost_model) if epoch == 0 else 0.0

        previous_L = self.L_frozen
        self._freeze_step(epoch)
        overhead += self._pipeline_step(epoch, self.L_frozen != previous_L)

        shards = redistribute(self.dataset_size, self.topology, epoch, self.config.seed)
        iterations = shards.max_shard_size / self.batch_size
        R = self.topology.R

        cache_view = self._cache_view(epoch)
        # Without autopipe the initial plan stays: frozen layers keep occupying their devices.
        plan = self.plan
        profile = self.chunks.get(plan, self.topology, cache_view)
        M = profile.chosen
        schedule = schedule_iteration(plan, M, self.topology, self.cost_model, cache_view,
                                      batch_size=self.batch_size,
                                      record_blocks=self.config.output.write_timeline)
        iteration_time = schedule.makespan
        if self.flags.freeze_only and self.L_frozen > 0:
            iteration_time *= self.cost_model.freeze_only_slowdown

        stall = 0.0
        if cache_view is not None:
            self.cache_state = self.cache_state.model_copy(update={"presence": shards.sizes})
            if self.cache_state.boundary is not None:
                stall = self._tier_stall(epoch, iterations, iteration_time)
            samples_per_node = math.ceil(self.dataset_size / self.config.cluster.node_count)
            self._advance_cache(epoch, samples_per_node)

        self._record_timeline(epoch, schedule)
        self.last_M = M

        epoch_time = iterations * iteration_time + overhead + stall
        row = EpochRow(
            epoch=epoch,
            L_frozen=self.L_frozen,
            K=self.K,
            R=R,
            M=M,
            iteration_time=iteration_time,
            iterations=iterations,
            epoch_time=epoch_time,
            throughput=R * self.batch_size / iteration_time,
            bubble_time=schedule.bubble_time,
            comm_time=schedule.comm_time,
            exposed_comm_time=schedule.exposed_comm_time,
            cache_enabled=cache_view is not None,
            cache_stall_time=stall,
            transition_overhead=overhead,
        )
        log.debug(f"Epoch {epoch}: K={self.K} R={R} M={M} L_frozen={self.L_frozen} "
                  f"iteration {iteration_time * 1e3:.2f}ms x {iterations:.1f}, epoch {epoch_time:.1f}s")
        return row

    def run(self) -> List[EpochRow]:
        for epoch in range(self.training.epochs):
            self.rows.append(self.run_epoch(epoch))
        return self.rows


def simulate_run(config: ScenarioConfig, flags: Optional[FeatureFlags] = None, *,
                 baseline_total_time: Optional[float] = None, base_dir: Optional[Path] = None) -> RunReport:
    """
    Simulates every epoch of the scenario and reports speedup against the static baseline.

    The baseline (no freezing, static K and R) is simulated here unless its total time is
    passed in.
    """
    flags = flags or config.features
    log.info(f"Simulating '{config.name}' with flags {flags.label} "
             f"({config.training.epochs} epochs, N={config.cluster.node_count}, I={config.cluster.gpus_per_node})")

    run = ElasticRun(config, flags, base_dir=base_dir)
    rows = run.run()
    total_time = sum(row.epoch_time for row in rows)

    if baseline_total_time is None:
        if flags.is_baseline:
            baseline_total_time = total_time
        else:
            baseline_rows = ElasticRun(config, BASELINE_FLAGS, base_dir=base_dir).run()
            baseline_total_time = sum(row.epoch_time for row in baseline_rows)

    report = RunReport(
        scenario=config.name,
        flags=flags.label,
        rows=rows,
        total_time=total_time,
        total_samples=float(run.dataset_size * config.training.epochs),
        baseline_total_time=baseline_total_time,
        cached_forward_layers=run.cache_state.forward_layers_charged,
        timeline=run.timeline,
        cache_events=run.cache_events,
        transitions=run.transitions,
    )
    log.info(f"Finished '{config.name}' [{flags.label}]: total {total_time:.1f}s, "
             f"speedup {report.speedup:.3f}x, K {report.k_trajectory}")
    return report


class BreakdownRow(BaseModel):
    flags: str
    throughput: float
    final_throughput: float
    total_time: float
    speedup: float


def speedup_breakdown(config: ScenarioConfig, combos: Optional[Iterable[str]] = None,
                      base_dir: Optional[Path] = None) -> List[BreakdownRow]:
    """Runs the scenario once per feature combination against a shared baseline."""
    combos = list(combos or BREAKDOWN_COMBOS)
    parsed = [FeatureFlags.from_tokens(combo) for combo in combos]

    baseline = simulate_run(config, BASELINE_FLAGS, base_dir=base_dir)
    table: List[BreakdownRow] = []
    for flags in parsed:
        report = baseline if flags.is_baseline else simulate_run(
            config, flags, baseline_total_time=baseline.total_time, base_dir=base_dir)
        table.append(BreakdownRow(
            flags=flags.label,
            throughput=report.throughput,
            final_throughput=report.rows[-1].throughput,
            total_time=report.total_time,
            speedup=report.speedup,
        ))
    return table
