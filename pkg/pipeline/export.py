"""
Run artefacts on disk: the canonical trace plus CSV tables for plotting.

  trace.jsonl   one JSON object per dispatched event; its SHA-256 is the run digest
  summary.csv   one row of RunSummary
  loops.csv     one row per completed control loop
  kpis.csv      periodic windowed comm KPIs
  slots.csv     per-slot processing time and deadline status
"""

import csv
import hashlib
import logging
import os
from dataclasses import dataclass

from pipeline.runner import LoopTrace, RunResult
from pipeline.scenario import IoError

log = logging.getLogger('SC3Sim.export')

LOOP_COLUMNS = [
    'loop', 'start_us', 't_capture_us', 't_uplink_us', 't_infer_us', 't_reason_us',
    't_downlink_us', 'total_us', 'confidence', 'subtask', 'tier', 'distance_m',
]
KPI_COLUMNS = [
    't_us', 'throughput_mbps', 'loss_rate', 'deadline_miss_rate', 'buffer_occupancy_mib',
    'avg_slot_latency_us',
]
SLOT_COLUMNS = ['t_us', 'duration_us', 'missed']


@dataclass(frozen=True)
class ExportedRun:
    out_dir: str
    digest: str
    files: tuple[str, ...]


def write_table(path: str, rows: list[dict], columns: list[str] | None = None) -> str:
    """Write dict rows as CSV; columns default to the keys of the first row."""
    if columns is None:
        columns = list(rows[0]) if rows else []
    try:
        with open(path, 'w', encoding='utf-8', newline='') as f:
            writer = csv.DictWriter(f, fieldnames=columns, extrasaction='ignore')
            writer.writeheader()
            writer.writerows(rows)
    except OSError as e:
        raise IoError(f'cannot write {path}: {e}')
    return path


def _write_trace(path: str, jsonl: str) -> str:
    data = jsonl.encode('utf-8')
    try:
        with open(path, 'wb') as f:
            f.write(data)
    except OSError as e:
        raise IoError(f'cannot write {path}: {e}')
    return hashlib.sha256(data).hexdigest()


def loops_table(loops: list[LoopTrace]) -> list[dict]:
    return [lt.to_row() for lt in loops]


def export_trace(result: RunResult, out_dir: str) -> ExportedRun:
    """Write every artefact of `result` into `out_dir` and return the trace digest."""
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as e:
        raise IoError(f'cannot create {out_dir}: {e}')

    files = []
    trace_path = os.path.join(out_dir, 'trace.jsonl')
    digest = _write_trace(trace_path, result.trace.to_jsonl())
    if digest != result.digest:
        raise IoError(f'{trace_path} does not reproduce the in-memory trace digest')
    files.append(trace_path)

    files.append(write_table(os.path.join(out_dir, 'summary.csv'), [result.summary.to_row()]))
    files.append(write_table(os.path.join(out_dir, 'loops.csv'), loops_table(result.loops), LOOP_COLUMNS))
    files.append(write_table(os.path.join(out_dir, 'kpis.csv'),
                             [k.to_row() for k in result.kpis], KPI_COLUMNS))
    slots = [
        {'t_us': t, 'duration_us': round(d, 3), 'missed': int(m)}
        for t, d, m in zip(result.slot_times_us, result.slot_durations_us, result.slot_missed)
    ]
    files.append(write_table(os.path.join(out_dir, 'slots.csv'), slots, SLOT_COLUMNS))

    log.info(f'Wrote {len(files)} files to {out_dir} (digest {digest[:12]})')
    return ExportedRun(out_dir, digest, tuple(files))
