from dataclasses import replace

import numpy as np
import pytest

from pipeline.brain import SubTaskKind, ToolResult, ToolStatus
from pipeline.inference import ResolutionTier
from pipeline.partition import Strategy
from pipeline.runner import Outcome, Sc3Run, run_scenario
from pipeline.scenario import TierSchedule, default_scenario

LOW, MID, HIGH = ResolutionTier.LOW, ResolutionTier.MID, ResolutionTier.HIGH


@pytest.fixture(scope='module')
def proposed_high():
    return run_scenario(default_scenario(seed=42))


@pytest.fixture(scope='module')
def tier_runs():
    """Proposed layout at every tier, cut at 10 s: enough loops for stable phase means."""
    return {tier: run_scenario(default_scenario(seed=42, tier=tier, t_max_s=10.0)) for tier in (LOW, MID, HIGH)}


# -- Strategy outcomes -------------------------------------------------------------

def test_proposed_high_succeeds(proposed_high):
    s = proposed_high.summary
    assert s.outcome is Outcome.SUCCESS
    assert s.sim_time_s < 60.0
    assert s.oom_events == 0
    assert s.loss_rate == 0.0
    assert s.deadline_miss_rate < 0.001
    assert 612.0 <= s.mean_loop_latency_ms <= 748.0


def test_proposed_high_loop_is_the_calibrated_sum(proposed_high):
    for lt in proposed_high.loops:
        assert lt.total_us == 676_353
        assert lt.total_us == lt.t_capture_us + lt.t_uplink_us + lt.t_infer_us + lt.t_reason_us + lt.t_downlink_us
        assert (lt.t_uplink_us, lt.t_infer_us, lt.t_downlink_us) == (75_000, 550_000, 3_020)


def test_all_four_stages_are_exercised(proposed_high):
    subtasks = [lt.subtask for lt in proposed_high.loops]
    assert subtasks[0] is SubTaskKind.SEARCH
    assert SubTaskKind.APPROACH in subtasks
    assert subtasks.index(SubTaskKind.APPROACH) > 1
    assert subtasks == sorted(subtasks, key=[SubTaskKind.SEARCH, SubTaskKind.APPROACH, SubTaskKind.COMPLETE].index)


def test_distance_never_grows_during_approach(proposed_high):
    distances = [lt.distance_m for lt in proposed_high.loops if lt.subtask is SubTaskKind.APPROACH]
    assert len(distances) >= 2
    assert all(b <= a + 1e-9 for a, b in zip(distances, distances[1:]))


class _LosesFinalHover(Sc3Run):
    """Drops the first downlink sent after the plan reaches Complete."""

    def __init__(self, scenario, drops=1):
        super().__init__(scenario)
        self.drops = drops

    def _downlink(self, cmd):
        if self.plan.finished and self.drops:
            self.drops -= 1
            return ToolResult(ToolStatus.DROPPED, {'latency_us': 9_020, 'attempts': 4})
        return super()._downlink(cmd)


def test_lost_final_hover_is_resent():
    run = _LosesFinalHover(default_scenario(seed=42))
    result = run.run()
    assert run.drops == 0
    assert result.outcome is Outcome.SUCCESS
    assert any(ev['payload'].get('abandoned') == 'downlink dropped' for ev in result.trace)
    hovers = [tool for ev in result.trace for tool in ev['payload'].get('tools', []) if tool['name'] == 'hover']
    assert [h['status'] for h in hovers] == ['Dropped', 'ok']
    assert result.loops[-1].subtask is SubTaskKind.COMPLETE


@pytest.mark.parametrize('seed', [10, 54])
def test_lossy_runs_always_end_with_an_outcome(seed):
    r = run_scenario(default_scenario(seed=seed, strategy=Strategy.STRATEGY_B, t_max_s=60.0))
    assert r.outcome in (Outcome.SUCCESS, Outcome.TIMEOUT, Outcome.LINK_FAILURE)
    assert r.trace.lines()[-1].count('"kind":"MissionEnd"') == 1


def test_strategy_a_fails_at_container_start():
    r = run_scenario(default_scenario(seed=42, strategy=Strategy.STRATEGY_A))
    assert r.outcome is Outcome.OOM_AT_STARTUP
    assert r.summary.loops == 0
    assert r.summary.oom_events == 1
    assert r.summary.sim_time_s == 0.0
    assert r.outcome.failed


def test_strategy_b_high_tier_is_degraded():
    r = run_scenario(default_scenario(seed=42, strategy=Strategy.STRATEGY_B, t_max_s=30.0))
    assert r.summary.loss_rate > 0.01
    assert r.summary.deadline_miss_rate > 0
    assert r.outcome in (Outcome.SUCCESS, Outcome.TIMEOUT, Outcome.LINK_FAILURE)


def test_sustained_overflow_is_a_link_failure():
    base = default_scenario(seed=42, strategy=Strategy.STRATEGY_B, t_max_s=20.0)
    r = run_scenario(replace(base, buffer=replace(base.buffer, per_mbps_mib=1000.0)))
    assert r.outcome is Outcome.LINK_FAILURE
    assert 4.9 <= r.summary.sim_time_s <= 5.1


# -- Latency decomposition and bandwidth ----------------------------------------------

def test_mean_loop_latency_grows_with_tier(tier_runs):
    means = [tier_runs[t].summary.mean_loop_latency_ms for t in (LOW, MID, HIGH)]
    assert means == pytest.approx([442.353, 566.353, 676.353])
    assert means[0] < 500.0
    assert means[0] < means[1] < means[2]


def test_inference_dominates_every_tier(tier_runs):
    for r in tier_runs.values():
        s = r.summary
        assert s.mean_infer_ms > 0.6 * s.mean_loop_latency_ms


def test_uplink_growth_is_smaller_than_inference_growth(tier_runs):
    low, high = tier_runs[LOW].summary, tier_runs[HIGH].summary
    uplink_delta = high.mean_uplink_ms - low.mean_uplink_ms
    assert uplink_delta < 70.0
    assert uplink_delta < high.mean_infer_ms - low.mean_infer_ms


def test_stream_load_spans_sub_mbps_to_over_ten(tier_runs):
    assert tier_runs[LOW].summary.stream_mbps < 1.0
    assert tier_runs[HIGH].summary.stream_mbps > 10.0


def test_confidence_orders_with_tier(tier_runs):
    conf = {t: tier_runs[t].loops[0].confidence for t in (LOW, MID, HIGH)}
    assert conf[HIGH] > conf[MID] > conf[LOW]


def test_low_tier_never_detects_and_times_out():
    r = run_scenario(default_scenario(seed=42, tier=LOW, t_max_s=5.0))
    assert r.outcome is Outcome.TIMEOUT
    assert all(lt.subtask is SubTaskKind.SEARCH for lt in r.loops)
    assert max(lt.confidence for lt in r.loops) < 0.6


# -- Determinism and isolation ---------------------------------------------------------

def test_same_seed_same_digest():
    s = default_scenario(seed=7, strategy=Strategy.STRATEGY_B, t_max_s=4.0)
    assert run_scenario(s).digest == run_scenario(s).digest


def test_different_seed_different_digest():
    a = run_scenario(default_scenario(seed=42, t_max_s=4.0))
    b = run_scenario(default_scenario(seed=43, t_max_s=4.0))
    assert a.digest != b.digest


@pytest.mark.parametrize('strategy', [Strategy.PROPOSED, Strategy.STRATEGY_B])
def test_isolated_slot_trace_ignores_inference_load(strategy):
    s = default_scenario(seed=11, strategy=strategy, t_max_s=3.0)
    loaded = run_scenario(s, inference_load=True)
    idle = run_scenario(s, inference_load=False)
    assert idle.outcome is Outcome.COMM_ONLY
    assert loaded.slot_times_us == idle.slot_times_us
    assert [repr(d) for d in loaded.slot_durations_us] == [repr(d) for d in idle.slot_durations_us]


def test_shared_mode_jitters_slot_latency():
    shared = run_scenario(default_scenario(seed=42, strategy=Strategy.SHARED_NO_ISOLATION, t_max_s=4.0))
    isolated = run_scenario(default_scenario(seed=42, t_max_s=4.0))
    assert shared.summary.slot_latency_std_us > 0
    assert isolated.summary.slot_latency_std_us == 0
    assert np.max(shared.slot_durations_us) > 500


# -- Agent behaviour in the loop ------------------------------------------------------

def test_per_phase_tier_schedule_switches_resolution():
    s = replace(default_scenario(seed=42), tier=TierSchedule(HIGH, LOW))
    r = run_scenario(s)
    assert r.outcome is Outcome.SUCCESS
    tiers = [(lt.subtask, lt.tier) for lt in r.loops]
    assert all(t is HIGH for k, t in tiers if k is SubTaskKind.SEARCH)
    assert any(t is LOW for k, t in tiers if k is SubTaskKind.APPROACH)
    calls = [tool['name'] for ev in r.trace for tool in ev['payload'].get('tools', [])]
    assert calls.count('set_uplink_resolution') == 1


def test_tool_calls_are_traced_with_status(proposed_high):
    tools = [tool for ev in proposed_high.trace for tool in ev['payload'].get('tools', [])]
    names = {t['name'] for t in tools}
    assert {'run_detection', 'get_kpis', 'set_yaw_rate', 'move_toward', 'hover'} <= names
    assert all(set(t) == {'name', 'arguments', 'status'} for t in tools)
    assert all(t['status'] == 'ok' for t in tools)


def test_trace_records_drone_state_on_each_command(proposed_high):
    delivered = [ev for ev in proposed_high.trace if ev['kind'] == 'CommandDelivered']
    assert len(delivered) == len(proposed_high.loops)
    assert all('drone' in ev['payload'] for ev in delivered)


def test_trace_ends_with_mission_end(proposed_high):
    last = proposed_high.trace.lines()[-1]
    assert '"kind":"MissionEnd"' in last
    assert '"outcome":"Success"' in last


def test_memory_holds_every_record_kind():
    run = Sc3Run(default_scenario(seed=42, t_max_s=3.0))
    run.run()
    kinds = {r.kind.value for r in run.memory.query(None, 256)}
    assert kinds == {'ActionExecuted', 'PerceptionOutcome', 'KpiSample'}


def test_kpis_are_sampled_periodically(proposed_high):
    times = [k.t_us for k in proposed_high.kpis]
    assert times[:3] == [1_000_000, 2_000_000, 3_000_000]
    assert all(k.loss_rate == 0.0 for k in proposed_high.kpis)
