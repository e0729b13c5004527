import itertools
import logging
import numpy as np
from pydantic import BaseModel, Field, computed_field
from typing import Callable, Dict, List, Optional, Tuple

from .core_model import Sublayer, SublayerSeq
from .errors import DomainError, InfeasibleError
from .schemas import CostModel, PartitionerConfig, is_power_of_two

log = logging.getLogger(__name__)

Span = Tuple[int, int]

# Relative slack on the acceptance limit; equal-size sublayers must tie exactly.
LIMIT_TOLERANCE = 1e-12


class PartitionPlan(BaseModel):
    """Contiguous assignment of the active sublayers to K pipeline partitions."""

    seq: SublayerSeq
    K: int
    spans: List[Span] = Field(description="Half-open [start, end) index ranges over seq.sublayers, one per partition.")
    lambda_frozen: float

    model_config = {"frozen": True}

    @property
    def frozen_host(self) -> int:
        return 0

    @property
    def frozen_share(self) -> float:
        return self.lambda_frozen * self.seq.frozen_block_size

    def partition(self, k: int) -> List[Sublayer]:
        start, end = self.spans[k]
        return self.seq.sublayers[start:end]

    @computed_field
    @property
    def B_L(self) -> List[int]:
        return [end - start for start, end in self.spans]

    @computed_field
    @property
    def B_S(self) -> List[int]:
        return [sum(s.param_count for s in self.partition(k)) for k in range(self.K)]

    @computed_field
    @property
    def effective_size(self) -> List[float]:
        sizes: List[float] = [float(b) for b in self.B_S]
        sizes[0] += self.frozen_share
        return sizes

    @property
    def max_effective_size(self) -> float:
        return max(self.effective_size)

    def boundary_activation_bytes(self, k: int) -> int:
        """Bytes per sample sent from partition k to partition k+1."""
        start, end = self.spans[k]
        if end > start:
            return self.seq.sublayers[end - 1].activation_bytes
        return self.seq.input_activation_bytes


class ChunkProfile(BaseModel):
    """Modeled iteration time for every candidate micro-batch count."""

    K: int
    times: Dict[int, float]
    exposed_comm: Dict[int, float]
    chosen: int

    @property
    def candidates(self) -> List[int]:
        return sorted(self.times)

    @property
    def best_time(self) -> float:
        return self.times[self.chosen]


def _size_units(seq: SublayerSeq, partitioner: PartitionerConfig) -> float:
    return seq.model.bytes_per_param / partitioner.size_unit_bytes


def _fill_spans(sizes: np.ndarray, K: int, frozen_share: float,
                limit_for: Callable[[int, np.ndarray], float]) -> List[Span]:
    """
    Left-to-right fill: partition k keeps taking sublayers while its effective size stays
    within limit_for(k, remaining sizes). Every partition takes at least one sublayer and
    leaves one for each later partition; the last one absorbs whatever remains.
    """
    n = len(sizes)
    spans: List[Span] = []
    start = 0
    for k in range(K - 1):
        limit = limit_for(k, sizes[start:]) * (1.0 + LIMIT_TOLERANCE)
        size = frozen_share if k == 0 else 0.0
        end = start
        last_allowed = n - (K - k - 1)
        while end < last_allowed:
            if end > start and size + sizes[end] > limit:
                break
            size += sizes[end]
            end += 1
        spans.append((start, end))
        start = end

    spans.append((start, n))
    return spans


def _max_effective(sizes: np.ndarray, spans: List[Span], frozen_share: float) -> float:
    return max(float(sizes[start:end].sum()) + (frozen_share if k == 0 else 0.0)
               for k, (start, end) in enumerate(spans))


def partition_lower_bound(sizes: np.ndarray, K: int, frozen_share: float) -> float:
    """No contiguous K-split has a smaller max effective size than this."""
    return max((float(sizes.sum()) + frozen_share) / K, float(sizes.max()), frozen_share + float(sizes[0]))


def load_balance(seq: SublayerSeq, K: int, lambda_frozen: float,
                 partitioner: Optional[PartitionerConfig] = None) -> PartitionPlan:
    """
    Greedy left-to-right partitioning by parameter size.

    For partition k the limit is mean + spread of the sublayers not yet assigned, where
    mean = remaining_total / (K - k) and spread is their population variance (or standard
    deviation) divided by (K - k). Partition 0 starts from lambda * S_frozen.

    When the spread is large against the sizes the limit stops binding and the first
    partitions swallow almost everything. A result above twice `partition_lower_bound` is
    replaced by a fill against that fixed threshold, which keeps every plan within 2x of
    the optimal contiguous split.
    """
    partitioner = partitioner or PartitionerConfig()
    n = len(seq)

    if K < 1:
        raise DomainError(f"pipeline length K={K} must be >= 1")
    if n == 0 and K == 1:
        return PartitionPlan(seq=seq, K=1, spans=[(0, 0)], lambda_frozen=lambda_frozen)
    if K > n:
        raise InfeasibleError(f"cannot split {n} active sublayers into K={K} partitions")

    unit = _size_units(seq, partitioner)
    sizes = np.array([s.param_count for s in seq.sublayers], dtype=np.float64) * unit
    frozen_share = lambda_frozen * seq.frozen_block_size * unit

    def criterion_limit(k: int, remaining: np.ndarray) -> float:
        parts_left = K - k
        if partitioner.criterion == "mean_std":
            spread = np.std(remaining) / parts_left
        else:
            spread = np.var(remaining) / parts_left
        return remaining.sum() / parts_left + spread

    spans = _fill_spans(sizes, K, frozen_share, criterion_limit)

    threshold = 2.0 * partition_lower_bound(sizes, K, frozen_share)
    greedy_max = _max_effective(sizes, spans, frozen_share)
    if greedy_max > threshold * (1.0 + LIMIT_TOLERANCE):
        log.debug(f"Criterion split for K={K} peaks at {greedy_max:,.2f} units, "
                  f"refilling against {threshold:,.2f}")
        spans = _fill_spans(sizes, K, frozen_share, lambda k, remaining: threshold)

    return PartitionPlan(seq=seq, K=K, spans=spans, lambda_frozen=lambda_frozen)


def feasible_length(current_K: int, active_sublayers: int) -> int:
    """Largest K reachable by halving current_K that fits the active sublayer count."""
    K = current_K
    while K > max(1, active_sublayers):
        K //= 2
    return K


def try_compress(seq: SublayerSeq, current_K: int, lambda_frozen: float, M_GPU_0: float,
                 partitioner: Optional[PartitionerConfig] = None) -> Tuple[int, PartitionPlan]:
    """
    Halves K while the halved plan's max effective size stays <= M_GPU_0.

    K is first halved until it no longer exceeds the active sublayer count, so a fully
    frozen model ends at K=1.
    """
    if not is_power_of_two(current_K):
        raise DomainError(f"pipeline length K={current_K} must be a power of two")

    K = feasible_length(current_K, len(seq))
    if K != current_K:
        log.info(f"Only {len(seq)} active sublayers left: pipeline shrinks {current_K} -> {K}")
    plan = load_balance(seq, K, lambda_frozen, partitioner)

    while K > 1:
        candidate = load_balance(seq, K // 2, lambda_frozen, partitioner)
        if candidate.max_effective_size > M_GPU_0:
            log.debug(f"Compression {K} -> {K // 2} rejected: {candidate.max_effective_size:,.0f} > {M_GPU_0:,.0f}")
            break
        K //= 2
        plan = candidate
        log.debug(f"Compression accepted: K={K}, max effective size {plan.max_effective_size:,.0f}")

    return K, plan


def brute_force_partition(seq: SublayerSeq, K: int, lambda_frozen: float) -> Tuple[float, List[Span]]:
    """Enumerates every contiguous split and returns the minimal max effective size."""
    n = len(seq)
    if K < 1 or K > n:
        raise InfeasibleError(f"cannot split {n} active sublayers into K={K} partitions")

    sizes = [s.param_count for s in seq.sublayers]
    prefix = [0] + list(itertools.accumulate(sizes))
    frozen_share = lambda_frozen * seq.frozen_block_size

    best = float("inf")
    best_spans: List[Span] = []
    for cuts in itertools.combinations(range(1, n), K - 1):
        bounds = (0,) + cuts + (n,)
        worst = max(
            prefix[bounds[k + 1]] - prefix[bounds[k]] + (frozen_share if k == 0 else 0.0)
            for k in range(K)
        )
        if worst < best:
            best = worst
            best_spans = [(bounds[k], bounds[k + 1]) for k in range(K)]
    return best, best_spans


def chunk_candidates(K: int, batch_size: int, integer_micro_batches: bool) -> List[int]:
    candidates = list(range(K, 6 * K + 1))
    if integer_micro_batches:
        candidates = [m for m in candidates if m <= batch_size] or [min(K, batch_size)]
    return candidates


def optimal_chunks(K: int, plan: PartitionPlan, cost_model: CostModel, topology, batch_size: int,
                   cache_state=None) -> ChunkProfile:
    """Profiles M in {K, ..., 6K} and picks the fastest (ties -> smallest M)."""
    from .engine.schedule import schedule_iteration

    if K != plan.K:
        raise DomainError(f"K={K} does not match the plan's pipeline length {plan.K}")

    times: Dict[int, float] = {}
    exposed: Dict[int, float] = {}
    for M in chunk_candidates(K, batch_size, cost_model.integer_micro_batches):
        schedule = schedule_iteration(plan, M, topology, cost_model, cache_state,
                                      batch_size=batch_size, record_blocks=False)
        times[M] = schedule.makespan
        exposed[M] = schedule.exposed_comm_time

    chosen = min(times, key=lambda m: (times[m], m))
    log.debug(f"Chunk profile K={K}: " + ", ".join(f"M={m}:{t * 1e3:.2f}ms" for m, t in sorted(times.items())))
    return ChunkProfile(K=K, times=times, exposed_comm=exposed, chosen=chosen)
