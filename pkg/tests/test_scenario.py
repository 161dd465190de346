import pytest

from pipeline.inference import DEFAULT_TIERS, ResolutionTier
from pipeline.partition import IsolationMode, Owner, Strategy
from pipeline.scenario import (
    IoError, LayoutInvalid, SchemaError, TierSchedule, load_scenario, scenario_from_dict,
)


def test_minimal_file_fills_defaults(write_scenario):
    s = load_scenario(write_scenario({'strategy': 'Proposed', 'tier': 'High', 'seed': 42}))
    assert s.seed == 42
    assert s.strategy is Strategy.PROPOSED
    assert s.tier == TierSchedule.fixed(ResolutionTier.HIGH)
    assert s.t_max_s == 120.0 and s.reasoning_ms == 15.0
    assert s.layout.by_owner(Owner.COMM).memory_capacity_mib == 40960
    assert s.tiers == DEFAULT_TIERS
    assert s.name == 'scenario'


def test_name_comes_from_file_or_field(write_scenario):
    assert load_scenario(write_scenario({'tier': 'Low', 'seed': 1}, 'sweep_base.json')).name == 'sweep_base'
    assert load_scenario(write_scenario({'tier': 'Low', 'seed': 1, 'name': 'x'})).name == 'x'


def test_custom_layout_over_budget_is_invalid(write_scenario):
    path = write_scenario({
        'strategy': 'Custom', 'tier': 'High', 'seed': 1,
        'layout': [
            {'owner': 'comm', 'compute_fraction': 0.6, 'memory_capacity_mib': 40960},
            {'owner': 'inference', 'compute_fraction': 0.6, 'memory_capacity_mib': 40960},
        ],
    })
    with pytest.raises(LayoutInvalid) as info:
        load_scenario(path)
    assert 'SumComputeExceeded' in str(info.value)


def test_valid_custom_layout_keeps_isolation_override():
    s = scenario_from_dict({
        'tier': 'Mid', 'seed': 3, 'isolation_mode': 'Shared',
        'layout': [
            {'owner': 'comm', 'compute_fraction': 0.5, 'memory_capacity_mib': 32768},
            {'owner': 'inference', 'compute_fraction': 0.5, 'memory_capacity_mib': 40960},
        ],
    })
    assert s.strategy is Strategy.CUSTOM
    assert s.layout.isolation_mode is IsolationMode.SHARED
    assert s.layout.by_owner(Owner.COMM).memory_capacity_mib == 32768


@pytest.mark.parametrize('data, field', [
    ({'tier': 'High', 'seed': 1, 'colour': 'red'}, 'colour'),
    ({'tier': 'High', 'seed': 1, 'link': {'capacity': 10}}, 'link.capacity'),
    ({'tier': 'High', 'seed': 1, 'world': {'target': {'pos': [1, 1, 1]}}}, 'world.target.pos'),
    ({'tier': 'High'}, 'seed'),
    ({'seed': 1}, 'tier'),
    ({'tier': 'Ultra', 'seed': 1}, 'tier'),
    ({'tier': 'High', 'seed': 1.5}, 'seed'),
    ({'tier': 'High', 'seed': 1, 'strategy': 'Greedy'}, 'strategy'),
    ({'tier': 'High', 'seed': 1, 'strategy': 'Custom'}, 'layout'),
    ({'tier': 'High', 'seed': 1, 'slot': {'slot_us': '500'}}, 'slot.slot_us'),
    ({'tier': 'High', 'seed': 1, 'tiers': {'Low': {'stream_mbps': 20.0}}}, 'tiers.*.stream_mbps'),
    ({'tier': 'High', 'seed': 1, 'model': {'activation_mib': {'Huge': 1}}}, 'model.activation_mib.Huge'),
    ({'tier': 'High', 'seed': 1, 'instruction': 'Juggle the chair.'}, 'instruction'),
    ({'tier': 'High', 'seed': 1, 'instruction': 'Find a door.'}, 'instruction'),
    ({'tier': {'Search': 'High'}, 'seed': 1}, 'tier'),
])
def test_schema_errors_name_the_field(data, field):
    with pytest.raises(SchemaError) as info:
        scenario_from_dict(data)
    assert info.value.field == field


def test_dataclass_validation_surfaces_as_schema_error():
    with pytest.raises(SchemaError) as info:
        scenario_from_dict({'tier': 'High', 'seed': 1, 'confidence': {'detect_threshold': 0.99}})
    assert info.value.field == 'confidence'


def test_layout_with_named_strategy_is_rejected():
    with pytest.raises(SchemaError) as info:
        scenario_from_dict({
            'tier': 'High', 'seed': 1, 'strategy': 'Proposed',
            'layout': [{'owner': 'comm', 'compute_fraction': 0.5, 'memory_capacity_mib': 1024}],
        })
    assert info.value.field == 'layout'


def test_per_phase_tier_schedule():
    s = scenario_from_dict({'tier': {'Search': 'High', 'Approach': 'Low'}, 'seed': 1})
    assert s.tier.search is ResolutionTier.HIGH
    assert s.tier.approach is ResolutionTier.LOW
    assert s.tier.label == 'Search=High/Approach=Low'


def test_nested_overrides_are_typed():
    s = scenario_from_dict({
        'tier': 'High', 'seed': 1,
        'buffer': {'per_mbps_mib': 500},
        'world': {'spawn_position': [4, 10, 1], 'limits': {'v_max': 1.0}},
        'brain': {'known_objects': ['Chair', 'box']},
        'model': {'weights_mib': 30000, 'activation_mib': {'High': 4096}},
    })
    assert s.buffer.per_mbps_mib == 500.0 and isinstance(s.buffer.per_mbps_mib, float)
    assert s.world.spawn_position == (4.0, 10.0, 1.0)
    assert s.world.limits.v_max == 1.0
    assert s.brain.known_objects == ('chair', 'box')
    assert s.model.weights_mib == 30000
    assert s.model.activation_mib[ResolutionTier.HIGH] == 4096
    assert s.model.activation_mib[ResolutionTier.LOW] == 512


def test_isolation_override_on_named_strategy():
    s = scenario_from_dict({'tier': 'High', 'seed': 1, 'isolation_mode': 'Shared'})
    assert s.strategy is Strategy.PROPOSED
    assert s.layout.isolation_mode is IsolationMode.SHARED


def test_missing_file_is_io_error(tmp_path):
    with pytest.raises(IoError):
        load_scenario(str(tmp_path / 'nope.json'))


def test_broken_json_is_schema_error(tmp_path):
    path = tmp_path / 'bad.json'
    path.write_text('{"tier": "High",', encoding='utf-8')
    with pytest.raises(SchemaError):
        load_scenario(str(path))


def test_replan_switches_layout(scenario):
    b = scenario.replan(Strategy.STRATEGY_B)
    assert b.layout.by_owner(Owner.COMM).memory_capacity_mib == 20480
    assert b.seed == scenario.seed


@pytest.mark.parametrize('overrides, field', [
    ({'slot': {'slot_us': 0}}, 'slot'),
    ({'slot': {'nominal_proc_us': 900.0}}, 'slot'),
    ({'slot': {'harq_max_attempts': 0}}, 'slot'),
    ({'buffer': {'burst_factor': 0.5}}, 'buffer'),
    ({'buffer': {'per_mbps_mib': -1.0}}, 'buffer'),
    ({'link': {'link_capacity_mbps': 0.0}}, 'link'),
    ({'link': {'link_capacity_mbps': 10.0}}, 'link.link_capacity_mbps'),
    ({'world': {'control_dt_us': 0}}, 'world'),
    ({'world': {'frame_period_us': 0}}, 'world'),
])
def test_timing_and_capacity_invariants_are_enforced(write_scenario, overrides, field):
    with pytest.raises(SchemaError) as info:
        load_scenario(write_scenario({'tier': 'High', 'seed': 1, **overrides}))
    assert info.value.field == field
