import json
import logging
import pandas as pd
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional

from utils.atomic_io import atomic_write_text

from .config import DEFAULT_OUT_DIR
from .errors import OutputError
from .schemas import REPORT_COLUMNS, RunReport, ScenarioConfig

log = logging.getLogger(__name__)


def _write(path: Path, text: str) -> Path:
    try:
        return atomic_write_text(path, text)
    except OSError as e:
        raise OutputError(f"cannot write {path}: {e.strerror or e}") from e


def frame_to_csv(frame: pd.DataFrame, path) -> Path:
    return _write(Path(path), frame.to_csv(index=False, lineterminator="\n"))


def report_frame(report: RunReport) -> pd.DataFrame:
    return pd.DataFrame([row.model_dump() for row in report.rows], columns=REPORT_COLUMNS)


def write_report_csv(report: RunReport, path) -> Path:
    return frame_to_csv(report_frame(report), path)


def write_json(data: Any, path) -> Path:
    return _write(Path(path), json.dumps(data, indent=2, sort_keys=True) + "\n")


def write_jsonl(records: Iterable[Dict[str, Any]], path) -> Path:
    lines = [json.dumps(record, sort_keys=True) for record in records]
    return _write(Path(path), "".join(line + "\n" for line in lines))


def run_summary(report: RunReport) -> Dict[str, Any]:
    return {
        "scenario": report.scenario,
        "flags": report.flags,
        "speedup": report.speedup,
        "throughput": report.throughput,
        "comm_ratio": report.comm_ratio,
        "total_time": report.total_time,
        "baseline_total_time": report.baseline_total_time,
        "cached_forward_layers": report.cached_forward_layers,
        "K_trajectory": report.k_trajectory,
        "R_trajectory": report.r_trajectory,
        "M_trajectory": report.m_trajectory,
        "L_frozen_trajectory": [row.L_frozen for row in report.rows],
    }


def resolve_out_dir(config: ScenarioConfig, out_dir: Optional[str] = None) -> Path:
    return Path(out_dir or config.output.out_dir or DEFAULT_OUT_DIR)


def write_run_outputs(report: RunReport, config: ScenarioConfig, out_dir: Optional[str] = None) -> List[Path]:
    """Writes report CSV, timeline, cache events, transition log and summary; returns the paths."""
    target = resolve_out_dir(config, out_dir)
    names = config.output

    written = [write_report_csv(report, target / names.report_name)]
    if names.write_timeline:
        written.append(write_json([record.model_dump() for record in report.timeline], target / names.timeline_name))
    written.append(write_json([event.model_dump() for event in report.cache_events], target / names.cache_events_name))
    written.append(write_jsonl([t.model_dump(mode="json") for t in report.transitions], target / names.transitions_name))
    written.append(write_json(run_summary(report), target / names.summary_name))

    log.info(f"Wrote {len(written)} output files to {target}")
    return written
