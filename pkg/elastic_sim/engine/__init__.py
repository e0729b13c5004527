from .runner import (
    BASELINE_FLAGS,
    BREAKDOWN_COMBOS,
    BreakdownRow,
    ElasticRun,
    simulate_run,
    speedup_breakdown,
    transition_overhead,
)
from .schedule import (
    Block,
    IterationSchedule,
    exposed_comm,
    micro_batch_sizes,
    ring_allreduce_time,
    schedule_iteration,
    transfer_time,
)

__all__ = [
    "BASELINE_FLAGS", "BREAKDOWN_COMBOS", "Block", "BreakdownRow", "ElasticRun", "IterationSchedule",
    "exposed_comm", "micro_batch_sizes", "ring_allreduce_time", "schedule_iteration", "simulate_run", "speedup_breakdown",
    "transfer_time", "transition_overhead",
]
