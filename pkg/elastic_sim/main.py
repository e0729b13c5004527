import argparse
import asyncio
import logging
import pandas as pd
import sys
from pathlib import Path
from rich.console import Console
from rich.table import Table
from typing import List, Optional

from utils.logging_setup import setup_logging

from .engine import simulate_run, speedup_breakdown
from .errors import ConfigError, DomainError, InputError, OutputError
from .export import frame_to_csv, resolve_out_dir, write_run_outputs
from .scenario import apply_overrides, load_scenario
from .schemas import RunReport
from .sweep import SWEEP_AXES, parse_values, run_sweep

log = logging.getLogger(__name__)

console = Console()


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="elastic_sim",
        description="Deterministic elastic pipeline training simulator",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    run = commands.add_parser("run", help="Simulate a scenario, or sweep one axis of it")
    run.add_argument("--config", required=True, help="Scenario JSON file")
    run.add_argument("--flags", default=None, help="Feature list, e.g. baseline, all, autopipe+autodp")
    run.add_argument("--out", default=None, help="Output directory")
    run.add_argument("--seed", type=int, default=None, help="Override the scenario seed")
    run.add_argument("--sweep", choices=SWEEP_AXES, default=None, help="Sweep axis")
    run.add_argument("--values", default=None, help="Comma separated sweep values, e.g. 1/5,1/3,2/5")

    breakdown = commands.add_parser("breakdown", help="Throughput per feature combination")
    breakdown.add_argument("--config", required=True, help="Scenario JSON file")
    breakdown.add_argument("--combos", default=None, help="Semicolon separated combinations, e.g. baseline;autopipe;all")
    breakdown.add_argument("--out", default=None, help="Output directory")
    breakdown.add_argument("--seed", type=int, default=None, help="Override the scenario seed")
    return parser


def print_summary(report: RunReport) -> None:
    table = Table(title=f"{report.scenario} [{report.flags}]")
    for column in ("epoch", "L_frozen", "K", "R", "M", "iteration (ms)", "throughput", "epoch (s)", "cache"):
        table.add_column(column, justify="right")
    for row in report.rows:
        table.add_row(
            str(row.epoch), str(row.L_frozen), str(row.K), str(row.R), str(row.M),
            f"{row.iteration_time * 1e3:.2f}", f"{row.throughput:.1f}", f"{row.epoch_time:.1f}",
            "yes" if row.cache_enabled else "no",
        )
    console.print(table)
    console.print(f"speedup vs baseline: {report.speedup:.3f}x   comm ratio: {report.comm_ratio:.2%}")
    console.print(f"K trajectory: {' -> '.join(map(str, report.k_trajectory))}")
    console.print(f"R trajectory: {' -> '.join(map(str, report.r_trajectory))}")
    console.print(f"M trajectory: {' -> '.join(map(str, report.m_trajectory))}")


def _run(args: argparse.Namespace) -> None:
    config_path = Path(args.config)
    config = apply_overrides(load_scenario(config_path), flags=args.flags, out_dir=args.out, seed=args.seed)

    if args.sweep is not None:
        values = parse_values(args.values or "")
        combined = asyncio.run(run_sweep(config, args.sweep, values, out_dir=args.out, base_dir=config_path.parent))
        console.print(combined.to_string(index=False))
        return

    if args.values is not None:
        raise ConfigError("--values requires --sweep")

    report = simulate_run(config, base_dir=config_path.parent)
    write_run_outputs(report, config, args.out)
    print_summary(report)


def _breakdown(args: argparse.Namespace) -> None:
    config_path = Path(args.config)
    config = apply_overrides(load_scenario(config_path), out_dir=args.out, seed=args.seed)
    combos = [c.strip() for c in args.combos.split(";") if c.strip()] if args.combos else None
    rows = speedup_breakdown(config, combos, base_dir=config_path.parent)

    frame = pd.DataFrame([row.model_dump() for row in rows])
    frame_to_csv(frame, resolve_out_dir(config, args.out) / "breakdown.csv")

    table = Table(title=f"{config.name} speedup breakdown")
    for column in ("flags", "throughput", "final throughput", "total (s)", "speedup"):
        table.add_column(column, justify="right")
    for row in rows:
        table.add_row(row.flags, f"{row.throughput:.1f}", f"{row.final_throughput:.1f}",
                      f"{row.total_time:.1f}", f"{row.speedup:.3f}x")
    console.print(table)


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging()

    try:
        if args.command == "run":
            _run(args)
        else:
            _breakdown(args)
    except (ConfigError, DomainError) as e:
        log.error(f"Validation failed: {e}")
        return 2
    except InputError as e:
        log.error(f"Input failed: {e}")
        return 3
    except OutputError as e:
        log.error(f"Output failed: {e}")
        return 3
    except OSError as e:
        log.error(f"I/O failure: {e}")
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
