"""Concurrent parameter sweeps over one scenario."""
import asyncio
import logging
import pandas as pd
from async_lru import alru_cache
from fractions import Fraction
from pathlib import Path
from typing import Dict, List, Literal, Optional, Sequence

from .autodp import Topology
from .autopipe import load_balance, optimal_chunks
from .config import SWEEP_CONCURRENCY_LIMIT
from .core_model import m_partition
from .engine import BASELINE_FLAGS, simulate_run
from .errors import ConfigError
from .export import frame_to_csv, resolve_out_dir, write_report_csv
from .scenario import canonical_json, with_updates
from .schemas import ScenarioConfig, is_power_of_two

log = logging.getLogger(__name__)

SweepAxis = Literal["alpha", "chunks", "bandwidth"]
SWEEP_AXES = ("alpha", "chunks", "bandwidth")

RUN_COLUMNS = ["value", "speedup", "throughput", "total_time", "comm_ratio", "final_K", "final_R"]
CHUNK_COLUMNS = ["value", "R", "optimal_M", "iteration_time", "exposed_comm_time"]


def parse_values(text: str) -> List[float]:
    """Parses a comma separated list; fractions such as 1/3 are accepted."""
    values = []
    for token in (t.strip() for t in text.split(",")):
        if not token:
            continue
        try:
            values.append(float(Fraction(token)))
        except (ValueError, ZeroDivisionError) as e:
            raise ConfigError(f"invalid sweep value '{token}'") from e
    if not values:
        raise ConfigError("sweep needs at least one value")
    return values


def _variant(config: ScenarioConfig, axis: str, value: float) -> ScenarioConfig:
    if axis == "alpha":
        return with_updates(config, "training", alpha=value)
    return with_updates(config, "cluster", inter_node_bandwidth=value)


def chunk_profile_row(config: ScenarioConfig, K: int) -> Dict[str, float]:
    """Optimal micro-batch count of the unfrozen model at pipeline length K."""
    cluster = config.cluster
    if not is_power_of_two(K) or cluster.gpus_per_node % K != 0:
        raise ConfigError(f"chunks sweep value K={K} must be a power of two dividing {cluster.gpus_per_node}")

    model = config.resolved_model()
    plan = load_balance(m_partition(model, 0), K, config.training.lambda_frozen, config.partitioner)
    topology = Topology.initial(cluster, K)
    profile = optimal_chunks(K, plan, config.cost_model, topology, config.training.per_pipeline_batch_size)
    return {
        "value": K,
        "R": topology.R,
        "optimal_M": profile.chosen,
        "iteration_time": profile.best_time,
        "exposed_comm_time": profile.exposed_comm[profile.chosen],
    }


async def run_sweep(config: ScenarioConfig, axis: str, values: Sequence[float],
                    out_dir: Optional[str] = None, base_dir: Optional[Path] = None) -> pd.DataFrame:
    """
    Runs one scenario instance per value, at most SWEEP_CONCURRENCY_LIMIT at a time.

    Each instance writes its own report CSV; the combined table is written once all
    instances are done, ordered like `values`.
    """
    if axis not in SWEEP_AXES:
        raise ConfigError(f"unknown sweep axis '{axis}', expected one of {list(SWEEP_AXES)}")
    if not values:
        raise ConfigError("sweep needs at least one value")

    target = resolve_out_dir(config, out_dir) / f"sweep_{axis}"
    semaphore = asyncio.Semaphore(SWEEP_CONCURRENCY_LIMIT)
    log.info(f"Sweeping {axis} over {list(values)} with concurrency {SWEEP_CONCURRENCY_LIMIT}")

    # Scoped to this sweep so the cache never outlives its event loop.
    @alru_cache(maxsize=32)
    async def baseline_total_time(canonical: str) -> float:
        baseline_config = ScenarioConfig.model_validate_json(canonical)
        report = await asyncio.to_thread(simulate_run, baseline_config, BASELINE_FLAGS, base_dir=base_dir)
        return report.total_time

    async def run_one(index: int, value: float) -> Dict[str, float]:
        async with semaphore:
            if axis == "chunks":
                row = await asyncio.to_thread(chunk_profile_row, config, int(value))
                log.info(f"Sweep chunks K={int(value)}: optimal M={row['optimal_M']}")
                return row

            variant = _variant(config, axis, value)
            # alpha never changes the baseline, so every alpha value shares one baseline run
            baseline_key = canonical_json(with_updates(variant, "training", alpha=config.training.alpha))
            baseline = await baseline_total_time(baseline_key)
            report = await asyncio.to_thread(simulate_run, variant, baseline_total_time=baseline, base_dir=base_dir)
            await asyncio.to_thread(write_report_csv, report, target / f"value_{index}.csv")
            log.info(f"Sweep {axis}={value:g}: speedup {report.speedup:.3f}x")
            return {
                "value": value,
                "speedup": report.speedup,
                "throughput": report.throughput,
                "total_time": report.total_time,
                "comm_ratio": report.comm_ratio,
                "final_K": report.rows[-1].K,
                "final_R": report.rows[-1].R,
            }

    rows = await asyncio.gather(*(run_one(i, v) for i, v in enumerate(values)))

    columns = CHUNK_COLUMNS if axis == "chunks" else RUN_COLUMNS
    combined = pd.DataFrame(list(rows), columns=columns)
    frame_to_csv(combined, resolve_out_dir(config, out_dir) / f"sweep_{axis}.csv")
    return combined
