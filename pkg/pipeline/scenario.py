"""
Scenario files: a strict-schema JSON document describing one simulated run.

Only `seed` and `tier` are required; everything else falls back to the
calibrated defaults below. Unknown keys are rejected with the dotted path of
the offending field, so a typo can never silently fall back to a default.

Minimal file:
  {"strategy": "Proposed", "tier": "High", "seed": 42}
"""

import json
import logging
import os
from dataclasses import dataclass, field, fields, is_dataclass, replace

from pipeline.brain import DEFAULT_OBJECTS, MEMORY_CAPACITY, ParseError, SubTaskKind, parse_instruction
from pipeline.comm import BufferModel, LinkConfig, SlotConfig
from pipeline.inference import DEFAULT_TIERS, ConfidenceModel, ModelProfile, ResolutionTier, TierProfile
from pipeline.partition import (
    AcceleratorSpec, InvalidCustomLayout, IsolationMode, PartitionError, PartitionLayout, Strategy,
    build_layout, plan_layout,
)
from pipeline.world import WorldModel

log = logging.getLogger('SC3Sim.scenario')

DEFAULT_INSTRUCTION = 'Find a chair and approach it once you detect it.'


# -- Errors --------------------------------------------------------------------

class ScenarioError(Exception):
    pass


class SchemaError(ScenarioError):
    def __init__(self, field_path: str, reason: str):
        super().__init__(f'{field_path}: {reason}')
        self.field = field_path
        self.reason = reason


class LayoutInvalid(ScenarioError):
    def __init__(self, violations):
        super().__init__('invalid layout: ' + '; '.join(str(v) for v in violations))
        self.violations = violations


class IoError(Exception):
    pass


# -- Types ---------------------------------------------------------------------

@dataclass(frozen=True)
class TierSchedule:
    """Uplink tier per plan phase; Complete reuses the Approach tier."""
    search: ResolutionTier
    approach: ResolutionTier

    @classmethod
    def fixed(cls, tier: ResolutionTier) -> 'TierSchedule':
        return cls(tier, tier)

    def for_phase(self, kind: SubTaskKind) -> ResolutionTier:
        return self.search if kind is SubTaskKind.SEARCH else self.approach

    @property
    def label(self) -> str:
        if self.search is self.approach:
            return self.search.value
        return f'Search={self.search.value}/Approach={self.approach.value}'


@dataclass(frozen=True)
class BrainConfig:
    known_objects: tuple[str, ...] = DEFAULT_OBJECTS
    search_yaw_rate: float = 0.5
    approach_speed: float = 1.0
    memory_capacity: int = MEMORY_CAPACITY


@dataclass(frozen=True)
class Scenario:
    seed: int
    tier: TierSchedule
    name: str = 'scenario'
    accelerator: AcceleratorSpec = field(default_factory=AcceleratorSpec)
    strategy: Strategy = Strategy.PROPOSED
    layout: PartitionLayout | None = None
    link: LinkConfig = field(default_factory=LinkConfig)
    slot: SlotConfig = field(default_factory=SlotConfig)
    buffer: BufferModel = field(default_factory=BufferModel)
    model: ModelProfile = field(default_factory=ModelProfile)
    tiers: dict[ResolutionTier, TierProfile] = field(default_factory=lambda: dict(DEFAULT_TIERS))
    confidence: ConfidenceModel = field(default_factory=ConfidenceModel)
    world: WorldModel = field(default_factory=WorldModel)
    brain: BrainConfig = field(default_factory=BrainConfig)
    instruction: str = DEFAULT_INSTRUCTION
    t_max_s: float = 120.0
    reasoning_ms: float = 15.0
    j_mean: float = 0.8
    kpi_period_ms: float = 1000.0
    kpi_window_ms: float = 1000.0
    link_failure_window_s: float = 5.0
    link_failure_loss: float = 0.25

    def __post_init__(self):
        if self.layout is None:
            object.__setattr__(self, 'layout', plan_layout(self.accelerator, self.strategy))

    @property
    def t_max_us(self) -> int:
        return int(round(self.t_max_s * 1e6))

    @property
    def reasoning_us(self) -> int:
        return int(round(self.reasoning_ms * 1000))

    def replan(self, strategy: Strategy) -> 'Scenario':
        """Same scenario on another built-in strategy's layout."""
        return replace(self, strategy=strategy, layout=plan_layout(self.accelerator, strategy))


def default_scenario(seed: int = 42, tier: ResolutionTier = ResolutionTier.HIGH,
                     strategy: Strategy = Strategy.PROPOSED, **overrides) -> Scenario:
    return Scenario(seed=seed, tier=TierSchedule.fixed(tier), strategy=strategy, **overrides)


# -- Parsing -------------------------------------------------------------------

_TOP_LEVEL_SCALARS = (
    'name', 'instruction', 't_max_s', 'reasoning_ms', 'j_mean', 'kpi_period_ms',
    'kpi_window_ms', 'link_failure_window_s', 'link_failure_loss',
)
_SECTIONS = ('accelerator', 'link', 'slot', 'buffer', 'confidence', 'world', 'brain')
_KNOWN_KEYS = set(_TOP_LEVEL_SCALARS) | set(_SECTIONS) | {
    'seed', 'tier', 'strategy', 'layout', 'isolation_mode', 'model', 'tiers',
}
_LAYOUT_KEYS = {'owner', 'compute_fraction', 'memory_capacity_mib'}


def _coerce(default, value, path: str):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise SchemaError(path, 'expected true or false')
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise SchemaError(path, 'expected an integer')
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise SchemaError(path, 'expected a number')
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise SchemaError(path, 'expected a string')
        return value
    if isinstance(default, tuple):
        if not isinstance(value, list):
            raise SchemaError(path, 'expected a list')
        if default and all(isinstance(d, str) for d in default):
            if not value or not all(isinstance(v, str) and v for v in value):
                raise SchemaError(path, 'expected a non-empty list of strings')
            return tuple(v.lower() for v in value)
        if len(value) != len(default):
            raise SchemaError(path, f'expected {len(default)} numbers')
        return tuple(_coerce(float(d), v, f'{path}[{i}]') for i, (d, v) in enumerate(zip(default, value)))
    if is_dataclass(default):
        return _overlay(default, value, path)
    raise SchemaError(path, 'field cannot be set from a scenario file')


def _overlay(obj, data, path: str):
    """Return `obj` with the fields present in `data` replaced, strictly typed."""
    if not isinstance(data, dict):
        raise SchemaError(path, 'expected an object')
    names = {f.name for f in fields(obj)}
    changes = {}
    for key, value in data.items():
        if key not in names:
            raise SchemaError(f'{path}.{key}', 'unknown field')
        changes[key] = _coerce(getattr(obj, key), value, f'{path}.{key}')
    try:
        return replace(obj, **changes)
    except (ValueError, PartitionError) as e:
        raise SchemaError(path, str(e))


def _enum(cls, value, path: str):
    try:
        return cls(value)
    except ValueError:
        allowed = ', '.join(m.value for m in cls)
        raise SchemaError(path, f'{value!r} is not one of: {allowed}')


def _parse_tier(value) -> TierSchedule:
    if isinstance(value, str):
        return TierSchedule.fixed(_enum(ResolutionTier, value, 'tier'))
    if isinstance(value, dict):
        unknown = set(value) - {'Search', 'Approach'}
        if unknown:
            raise SchemaError(f'tier.{sorted(unknown)[0]}', 'unknown phase (use Search / Approach)')
        if set(value) != {'Search', 'Approach'}:
            raise SchemaError('tier', 'per-phase schedule needs both Search and Approach')
        return TierSchedule(_enum(ResolutionTier, value['Search'], 'tier.Search'),
                            _enum(ResolutionTier, value['Approach'], 'tier.Approach'))
    raise SchemaError('tier', 'expected a tier name or a {Search, Approach} mapping')


def _parse_model(data) -> ModelProfile:
    if not isinstance(data, dict):
        raise SchemaError('model', 'expected an object')
    model = ModelProfile()
    for key, value in data.items():
        if key == 'weights_mib':
            model = replace(model, weights_mib=_coerce(0, value, 'model.weights_mib'))
        elif key == 'activation_mib':
            if not isinstance(value, dict):
                raise SchemaError('model.activation_mib', 'expected an object')
            act = dict(model.activation_mib)
            for tier_name, mib in value.items():
                tier = _enum(ResolutionTier, tier_name, f'model.activation_mib.{tier_name}')
                act[tier] = _coerce(0, mib, f'model.activation_mib.{tier_name}')
            model = replace(model, activation_mib=act)
        else:
            raise SchemaError(f'model.{key}', 'unknown field')
    return model


def _parse_tiers(data) -> dict[ResolutionTier, TierProfile]:
    if not isinstance(data, dict):
        raise SchemaError('tiers', 'expected an object')
    tiers = dict(DEFAULT_TIERS)
    for name, section in data.items():
        tier = _enum(ResolutionTier, name, f'tiers.{name}')
        tiers[tier] = _overlay(tiers[tier], section, f'tiers.{name}')
    order = [tiers[t] for t in (ResolutionTier.LOW, ResolutionTier.MID, ResolutionTier.HIGH)]
    for attr in ('still_frame_kb', 'stream_mbps', 'inf_base_ms'):
        values = [getattr(t, attr) for t in order]
        if not values[0] < values[1] < values[2]:
            raise SchemaError(f'tiers.*.{attr}', 'must increase strictly from Low to High')
    return tiers


def _parse_layout(data, spec: AcceleratorSpec, mode: IsolationMode) -> PartitionLayout:
    if not isinstance(data, list) or not data:
        raise SchemaError('layout', 'expected a non-empty list of partitions')
    for i, entry in enumerate(data):
        if not isinstance(entry, dict):
            raise SchemaError(f'layout[{i}]', 'expected an object')
        unknown = set(entry) - _LAYOUT_KEYS
        if unknown:
            raise SchemaError(f'layout[{i}].{sorted(unknown)[0]}', 'unknown field')
        missing = _LAYOUT_KEYS - set(entry)
        if missing:
            raise SchemaError(f'layout[{i}].{sorted(missing)[0]}', 'required field missing')
        _enum_owner(entry['owner'], f'layout[{i}].owner')
        _coerce(0.0, entry['compute_fraction'], f'layout[{i}].compute_fraction')
        _coerce(0, entry['memory_capacity_mib'], f'layout[{i}].memory_capacity_mib')
    if {entry['owner'] for entry in data} != {'comm', 'inference'}:
        raise SchemaError('layout', 'needs a comm and an inference partition')
    layout = build_layout(data, mode)
    try:
        return plan_layout(spec, Strategy.CUSTOM, layout)
    except InvalidCustomLayout as e:
        raise LayoutInvalid(e.violations)


def _enum_owner(value, path: str) -> None:
    if value not in ('comm', 'inference'):
        raise SchemaError(path, f'{value!r} is not one of: comm, inference')


def scenario_from_dict(data: dict, name: str = 'scenario') -> Scenario:
    if not isinstance(data, dict):
        raise SchemaError('<root>', 'expected a JSON object')
    for key in data:
        if key not in _KNOWN_KEYS:
            raise SchemaError(key, 'unknown field')
    if 'seed' not in data:
        raise SchemaError('seed', 'required field missing')
    if 'tier' not in data:
        raise SchemaError('tier', 'required field missing')

    base = Scenario(seed=_coerce(0, data['seed'], 'seed'), tier=_parse_tier(data['tier']), name=name)
    changes = {}
    for key in _TOP_LEVEL_SCALARS:
        if key in data:
            changes[key] = _coerce(getattr(base, key), data[key], key)
    for key in _SECTIONS:
        if key in data:
            changes[key] = _overlay(getattr(base, key), data[key], key)
    if 'model' in data:
        changes['model'] = _parse_model(data['model'])
    if 'tiers' in data:
        changes['tiers'] = _parse_tiers(data['tiers'])

    spec = changes.get('accelerator', base.accelerator)
    mode = _enum(IsolationMode, data['isolation_mode'], 'isolation_mode') if 'isolation_mode' in data else None

    if 'layout' in data:
        strategy = _enum(Strategy, data.get('strategy', 'Custom'), 'strategy')
        if strategy is not Strategy.CUSTOM:
            raise SchemaError('layout', 'a custom layout requires strategy "Custom"')
        layout = _parse_layout(data['layout'], spec, mode or IsolationMode.ISOLATED)
    else:
        strategy = _enum(Strategy, data.get('strategy', 'Proposed'), 'strategy')
        if strategy is Strategy.CUSTOM:
            raise SchemaError('layout', 'required when strategy is "Custom"')
        layout = plan_layout(spec, strategy)
        if mode is not None:
            layout = replace(layout, isolation_mode=mode)

    scenario = replace(base, strategy=strategy, layout=layout, **changes)
    _check_consistency(scenario)
    return scenario


def _check_consistency(s: Scenario) -> None:
    if s.t_max_s <= 0:
        raise SchemaError('t_max_s', 'must be positive')
    if s.reasoning_ms < 0:
        raise SchemaError('reasoning_ms', 'must be non-negative')
    if s.kpi_period_ms <= 0 or s.kpi_window_ms <= 0:
        raise SchemaError('kpi_period_ms', 'KPI period and window must be positive')
    if not 0 < s.link_failure_loss <= 1:
        raise SchemaError('link_failure_loss', 'must lie in (0, 1]')
    top_mbps = max(p.stream_mbps for p in s.tiers.values())
    if s.link.link_capacity_mbps <= top_mbps:
        raise SchemaError('link.link_capacity_mbps', f'must exceed the highest tier stream ({top_mbps} Mbps)')
    if s.world.target.label not in s.brain.known_objects:
        raise SchemaError('world.target.label', f'{s.world.target.label!r} is not a known object')
    max_act = max(s.model.activation_mib.values())
    if s.model.weights_mib <= 0 or max_act <= 0:
        raise SchemaError('model', 'memory sizes must be positive')
    try:
        plan = parse_instruction(s.instruction, s.brain.known_objects)
    except ParseError as e:
        raise SchemaError('instruction', str(e))
    if plan.target != s.world.target.label:
        raise SchemaError('instruction', f'asks for {plan.target!r} but the world holds a {s.world.target.label!r}')


def load_scenario(path: str) -> Scenario:
    """Read, validate and default-fill a scenario file."""
    try:
        with open(path, 'r', encoding='utf-8') as f:
            data = json.load(f)
    except OSError as e:
        raise IoError(f'cannot read scenario {path}: {e}')
    except json.JSONDecodeError as e:
        raise SchemaError('<root>', f'invalid JSON: {e}')
    name = os.path.splitext(os.path.basename(path))[0]
    if isinstance(data, dict) and isinstance(data.get('name'), str):
        name = data['name']
    scenario = scenario_from_dict(data, name=name)
    log.info(f'Loaded scenario {scenario.name!r}: {scenario.strategy.value}, tier {scenario.tier.label}, '
             f'seed {scenario.seed}')
    return scenario
