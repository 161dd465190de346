"""
Api class, the one entry point the CLI (and tests) drive the simulator through.
Runs are independent and deterministic, so sweeps fan out over a thread pool
and results are collected back in input order.
"""

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, replace

import settings as settings_module
from pipeline.export import ExportedRun, export_trace, write_table
from pipeline.inference import ResolutionTier
from pipeline.partition import Strategy
from pipeline.runner import RunResult, run_scenario
from pipeline.scenario import Scenario, SchemaError, TierSchedule, load_scenario

log = logging.getLogger('SC3Sim.api')

SWEEP_PARAMETERS = ('tier', 'strategy', 'seed', 'b0_mbps', 'per_mbps_mib')
COMPARED_STRATEGIES = (
    Strategy.PROPOSED, Strategy.STRATEGY_A, Strategy.STRATEGY_B, Strategy.SHARED_NO_ISOLATION,
)
COMPARE_COLUMNS = [
    'strategy', 'outcome', 'loops', 'mean_loop_latency_ms', 'p95_loop_latency_ms', 'loss_rate',
    'deadline_miss_rate', 'slot_latency_mean_us', 'slot_latency_std_us', 'oom_events',
    'dropped_transfers', 'mean_confidence', 'digest',
]


class UnknownParameter(Exception):
    pass


def _number(parameter: str, value) -> float:
    try:
        return float(value)
    except (TypeError, ValueError):
        raise SchemaError(parameter, f'{value!r} is not a number')


def apply_parameter(base: Scenario, parameter: str, value) -> Scenario:
    """Return `base` with one sweepable parameter set; values may be CLI strings."""
    if parameter == 'tier':
        try:
            tier = ResolutionTier(value)
        except ValueError:
            raise SchemaError('tier', f'{value!r} is not one of: Low, Mid, High')
        return replace(base, tier=TierSchedule.fixed(tier))
    if parameter == 'strategy':
        try:
            strategy = Strategy(value)
        except ValueError:
            raise SchemaError('strategy', f'{value!r} is not a built-in strategy')
        if strategy is Strategy.CUSTOM:
            raise SchemaError('strategy', 'Custom cannot be swept; give a layout in the scenario file')
        return base.replan(strategy)
    if parameter == 'seed':
        try:
            return replace(base, seed=int(value))
        except (TypeError, ValueError):
            raise SchemaError('seed', f'{value!r} is not an integer')
    if parameter == 'b0_mbps':
        try:
            return replace(base, confidence=replace(base.confidence, b0_mbps=_number(parameter, value)))
        except ValueError as e:
            raise SchemaError('confidence.b0_mbps', str(e))
    if parameter == 'per_mbps_mib':
        return replace(base, buffer=replace(base.buffer, per_mbps_mib=_number(parameter, value)))
    raise UnknownParameter(f'{parameter!r} cannot be swept (choose from {", ".join(SWEEP_PARAMETERS)})')


class Api:
    def __init__(self, settings: settings_module.Settings | None = None):
        self._settings = settings or settings_module.load()

    # -- Settings -------------------------------------------------------------

    def get_settings(self) -> dict:
        return asdict(self._settings)

    def save_settings(self, data: dict) -> None:
        for k, v in data.items():
            if hasattr(self._settings, k):
                setattr(self._settings, k, v)
        settings_module.save(self._settings)

    # -- Scenarios ------------------------------------------------------------

    def validate(self, path: str) -> dict:
        """Load and check a scenario; raises SchemaError / LayoutInvalid / IoError."""
        s = load_scenario(path)
        return {
            'ok': True,
            'name': s.name,
            'strategy': s.strategy.value,
            'isolation_mode': s.layout.isolation_mode.value,
            'tier': s.tier.label,
            'seed': s.seed,
            'layout': s.layout.to_list(),
        }

    def default_out_dir(self, s: Scenario) -> str:
        return os.path.join(self._settings.out_dir, f'{s.name}-{s.strategy.value}-seed{s.seed}')

    def run(self, s: Scenario, out_dir: str | None = None) -> tuple[RunResult, ExportedRun]:
        result = run_scenario(s)
        exported = export_trace(result, out_dir or self.default_out_dir(s))
        return result, exported

    def _run_all(self, scenarios: list[Scenario]) -> list[RunResult]:
        workers = max(1, min(self._settings.max_workers, len(scenarios)))
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(run_scenario, s) for s in scenarios]
            return [f.result() for f in futures]

    def sweep(self, base: Scenario, parameter: str, values: list, out_dir: str | None = None) -> list[dict]:
        """One run per value; rows come back in the order of `values`."""
        if parameter not in SWEEP_PARAMETERS:
            raise UnknownParameter(
                f'{parameter!r} cannot be swept (choose from {", ".join(SWEEP_PARAMETERS)})'
            )
        scenarios = [apply_parameter(base, parameter, v) for v in values]
        log.info(f'Sweeping {parameter} over {list(values)} ({len(scenarios)} runs)')
        rows = []
        for value, result in zip(values, self._run_all(scenarios)):
            rows.append({'parameter': parameter, 'value': str(value), **result.summary.to_row()})
        if out_dir:
            os.makedirs(out_dir, exist_ok=True)
            write_table(os.path.join(out_dir, f'sweep_{parameter}.csv'), rows)
        return rows

    def compare_strategies(self, base: Scenario, out_dir: str | None = None) -> list[dict]:
        """Same scenario and seed under each built-in partitioning strategy."""
        results = self._run_all([base.replan(st) for st in COMPARED_STRATEGIES])
        rows = [{k: r.summary.to_row()[k] for k in COMPARE_COLUMNS} for r in results]
        for row in rows:
            log.info(f'{row["strategy"]:<18} {row["outcome"]:<13} loops={row["loops"]} '
                     f'mean={row["mean_loop_latency_ms"]:.1f}ms loss={row["loss_rate"]:.4f} '
                     f'miss={row["deadline_miss_rate"]:.4f}')
        if out_dir:
            os.makedirs(out_dir, exist_ok=True)
            write_table(os.path.join(out_dir, 'compare.csv'), rows, COMPARE_COLUMNS)
        return rows
