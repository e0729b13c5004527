"""Synchronous GPipe iteration schedule with bucketed ring AllReduce on a separate track."""
import logging
import math
from pydantic import BaseModel, Field, computed_field
from typing import List, Literal, Optional

from ..autocache import CacheState, activation_io_time, frozen_forward_time
from ..autodp import Topology, ddp_skip_set
from ..autopipe import PartitionPlan
from ..errors import DomainError
from ..schemas import CostModel

log = logging.getLogger(__name__)

BlockKind = Literal["F", "B", "U", "XFER", "AR", "CACHE"]

COMPUTE_KINDS = ("F", "B", "U", "CACHE")


class Block(BaseModel):
    device: int
    kind: BlockKind
    start_s: float
    end_s: float
    tag: str
    micro_batch: Optional[int] = None

    @property
    def duration(self) -> float:
        return self.end_s - self.start_s


class IterationSchedule(BaseModel):
    """Timed blocks of one training iteration of one pipeline replica."""

    K: int
    M: int
    R: int
    micro_batch_sizes: List[float]
    blocks: List[Block] = Field(default_factory=list)
    pipeline_end: float = Field(description="End of the last backward block.")
    makespan: float = Field(description="End of the last optimizer update.")
    compute_only_makespan: float = Field(description="Makespan with every AllReduce segment removed.")
    busy_per_device: List[float]
    comm_per_device: List[float]

    @computed_field
    @property
    def bubble_per_device(self) -> List[float]:
        return [self.pipeline_end - busy for busy in self.busy_per_device]

    @computed_field
    @property
    def bubble_time(self) -> float:
        return sum(self.bubble_per_device)

    @computed_field
    @property
    def comm_time(self) -> float:
        return max(self.comm_per_device, default=0.0)

    @computed_field
    @property
    def exposed_comm_time(self) -> float:
        return max(0.0, self.makespan - self.compute_only_makespan)

    def device_blocks(self, device: int, kinds=COMPUTE_KINDS) -> List[Block]:
        return sorted((b for b in self.blocks if b.device == device and b.kind in kinds), key=lambda b: b.start_s)


def transfer_time(num_bytes: float, bandwidth: float, latency: float = 0.0) -> float:
    if not bandwidth > 0:
        raise DomainError(f"bandwidth must be > 0, got {bandwidth}")
    return num_bytes / bandwidth + latency


def ring_allreduce_time(num_bytes: float, replicas: int, bandwidth: float, latency: float = 0.0) -> float:
    """Ring AllReduce: 2(R-1)/R of the payload crosses the bottleneck link."""
    if replicas <= 1:
        return 0.0
    return 2.0 * (replicas - 1) / replicas * num_bytes / bandwidth + latency


def exposed_comm(schedule: IterationSchedule) -> float:
    return schedule.exposed_comm_time


def micro_batch_sizes(batch_size: int, M: int, integer: bool) -> List[float]:
    if not integer:
        return [batch_size / M] * M
    if M > batch_size:
        raise DomainError(f"cannot split {batch_size} samples into {M} integer micro-batches")
    base, extra = divmod(batch_size, M)
    return [float(base + 1 if b < extra else base) for b in range(M)]


def _bucket_bounds(param_bytes: float, bucket_size: float) -> List[float]:
    """Cumulative byte offsets at which each bucket becomes complete."""
    if param_bytes <= 0:
        return []
    count = math.ceil(param_bytes / bucket_size)
    return [min(param_bytes, (j + 1) * bucket_size) for j in range(count)]


def _prefix_cost(plan: PartitionPlan, cost_model: CostModel, cache_state: Optional[CacheState],
                 samples: float):
    """(cache block seconds, seconds folded into F_0) for the frozen prefix of one micro-batch."""
    seq = plan.seq
    model, frozen = seq.model, seq.frozen_layers
    if cache_state is None or not cache_state.enabled:
        return 0.0, frozen_forward_time(model, cost_model, 0, frozen, samples)

    start = cache_state.boundary if cache_state.boundary is not None else 0
    read = 0.0
    if cache_state.boundary is not None:
        read = activation_io_time(model, start, samples, cache_state.tier) + cache_state.tier.read_latency
    return read + frozen_forward_time(model, cost_model, start, frozen, samples), 0.0


def schedule_iteration(plan: PartitionPlan, M: int, topology: Topology, cost_model: CostModel,
                       cache_state: Optional[CacheState] = None, *, batch_size: int,
                       record_blocks: bool = True) -> IterationSchedule:
    """
    Builds the timed schedule of one iteration.

    All forwards run in micro-batch order, then all backwards in reverse micro-batch
    order. Activation and gradient transfers delay the consumer but do not occupy a
    device. With R > 1 every device AllReduces its gradient buckets, in reverse parameter
    order, on its own communication track; a bucket starts once the final backward block
    has produced all of its gradients.
    """
    if M < 1:
        raise DomainError(f"micro-batch count M={M} must be >= 1")

    K, R = plan.K, topology.R
    cluster = topology.cluster
    sizes = micro_batch_sizes(batch_size, M, cost_model.integer_micro_batches)
    c, o, beta = cost_model.c_fwd, cost_model.micro_batch_overhead, cost_model.backward_ratio
    lat = cost_model.comm_latency
    B_S = plan.B_S
    boundary_bytes = [plan.boundary_activation_bytes(d) for d in range(K - 1)]

    blocks: List[Block] = []
    free = [0.0] * K
    busy = [0.0] * K

    def emit(device: int, kind: str, start: float, end: float, tag: str, b: Optional[int] = None) -> None:
        if record_blocks:
            blocks.append(Block(device=device, kind=kind, start_s=start, end_s=end, tag=tag, micro_batch=b))

    fwd_end = [[0.0] * M for _ in range(K)]
    for b in range(M):
        mb = sizes[b]
        cache_s, folded = _prefix_cost(plan, cost_model, cache_state, mb)
        for d in range(K):
            ready = 0.0
            if d > 0:
                xfer = transfer_time(boundary_bytes[d - 1] * mb, cluster.intra_node_bandwidth, lat)
                ready = fwd_end[d - 1][b] + xfer
                emit(d - 1, "XFER", fwd_end[d - 1][b], ready, f"act {d - 1}->{d} mb{b}", b)
            start = max(free[d], ready)
            if d == 0 and cache_s > 0:
                emit(0, "CACHE", start, start + cache_s, f"CACHE mb{b}", b)
                busy[0] += cache_s
                start += cache_s
            duration = o + c * B_S[d] * mb + (folded if d == 0 else 0.0)
            fwd_end[d][b] = start + duration
            free[d] = fwd_end[d][b]
            busy[d] += duration
            emit(d, "F", start, fwd_end[d][b], f"F{d},{b}", b)

    bwd_start = [[0.0] * M for _ in range(K)]
    bwd_end = [[0.0] * M for _ in range(K)]
    for b in reversed(range(M)):
        mb = sizes[b]
        for d in reversed(range(K)):
            ready = 0.0
            if d < K - 1:
                xfer = transfer_time(boundary_bytes[d] * mb, cluster.intra_node_bandwidth, lat)
                ready = bwd_end[d + 1][b] + xfer
                emit(d + 1, "XFER", bwd_end[d + 1][b], ready, f"grad {d + 1}->{d} mb{b}", b)
            start = max(free[d], ready)
            duration = o + beta * c * B_S[d] * mb
            bwd_start[d][b], bwd_end[d][b] = start, start + duration
            free[d] = bwd_end[d][b]
            busy[d] += duration
            emit(d, "B", start, bwd_end[d][b], f"B{d},{b}", b)

    pipeline_end = max(bwd_end[d][0] for d in range(K))
    link = cluster.inter_node_bandwidth if topology.replica_group_spans_nodes else cluster.intra_node_bandwidth

    makespan = compute_only = 0.0
    comm = [0.0] * K
    for d in range(K):
        last_b_end = bwd_end[d][0]
        ar_end = last_b_end
        if R > 1:
            # The last backward block (micro-batch 0) walks the partition in reverse parameter order.
            param_bytes = ddp_skip_set(plan, d).volume_bytes
            compute = beta * c * B_S[d] * sizes[0]
            track, previous = 0.0, 0.0
            for j, offset in enumerate(_bucket_bounds(param_bytes, cost_model.bucket_size)):
                bucket_ready = bwd_start[d][0] + o + compute * offset / param_bytes
                seconds = ring_allreduce_time(offset - previous, R, link, lat)
                previous = offset
                ar_start = max(bucket_ready, track)
                track = ar_start + seconds
                comm[d] += seconds
                emit(d, "AR", ar_start, track, f"AR{d} bucket{j}")
            ar_end = max(ar_end, track)

        update = cost_model.c_upd * B_S[d]
        u_start = max(last_b_end, ar_end)
        emit(d, "U", u_start, u_start + update, f"U{d}")
        makespan = max(makespan, u_start + update)
        compute_only = max(compute_only, last_b_end + update)

    return IterationSchedule(
        K=K, M=M, R=R,
        micro_batch_sizes=sizes,
        blocks=blocks,
        pipeline_end=pipeline_end,
        makespan=makespan,
        compute_only_makespan=compute_only,
        busy_per_device=busy,
        comm_per_device=comm,
    )
