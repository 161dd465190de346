"""
The agent layer: a template-grammar planner that compiles an instruction into
an ordered mission plan, a bounded contextual memory, and a toolbox of
callable SC3 primitives dispatched by name.

Planner grammar (case-insensitive, trailing punctuation ignored):
  <find-verb> [a|an|the] <object>
      [and <approach-verb> (it | [a|an|the] <object>)]
      [once/when/after you detect/see/spot it]
  find-verb     : find | locate | search for
  approach-verb : approach | go to | fly to
Every accepted instruction yields [Search(obj), Approach(obj), Complete].
"""

import logging
import math
import re
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

from pipeline.comm import KpiSnapshot

log = logging.getLogger('SC3Sim.brain')

DEFAULT_OBJECTS = ('chair', 'ladder', 'door')
MEMORY_CAPACITY = 256

_FIND_VERBS = ('search for', 'find', 'locate')
_APPROACH_VERBS = ('approach', 'go to', 'fly to')
_ARTICLES = ('a', 'an', 'the')
_CONDITION_RE = re.compile(r',?\s*(?:once|when|after)\s+you\s+(?:detect|see|spot)\s+it$')


# -- Plan ------------------------------------------------------------------------

class SubTaskKind(str, Enum):
    SEARCH = 'Search'
    APPROACH = 'Approach'
    COMPLETE = 'Complete'


@dataclass(frozen=True)
class SubTask:
    kind: SubTaskKind
    target: str | None = None

    def __str__(self) -> str:
        return f'{self.kind.value}({self.target})' if self.target else self.kind.value


@dataclass
class MissionPlan:
    tasks: tuple[SubTask, ...]
    cursor: int = 0
    target_position: tuple[float, float, float] | None = None

    @classmethod
    def for_target(cls, obj: str) -> 'MissionPlan':
        return cls((SubTask(SubTaskKind.SEARCH, obj), SubTask(SubTaskKind.APPROACH, obj),
                    SubTask(SubTaskKind.COMPLETE)))

    @property
    def current(self) -> SubTask:
        return self.tasks[self.cursor]

    @property
    def target(self) -> str | None:
        return self.tasks[0].target

    @property
    def finished(self) -> bool:
        return self.current.kind is SubTaskKind.COMPLETE

    def advance(self) -> SubTask:
        if self.cursor < len(self.tasks) - 1:
            self.cursor += 1
            log.debug(f'Plan cursor -> {self.current}')
        return self.current


class ParseErrorReason(str, Enum):
    UNKNOWN_VERB = 'UnknownVerb'
    UNKNOWN_OBJECT = 'UnknownObject'
    MALFORMED = 'Malformed'


class ParseError(Exception):
    def __init__(self, reason: ParseErrorReason, detail: str = ''):
        super().__init__(f'{reason.value}: {detail}' if detail else reason.value)
        self.reason = reason


class NoPlan(Exception):
    pass


def _strip_verb(text: str, verbs: tuple[str, ...]) -> str | None:
    for verb in verbs:
        if text == verb or text.startswith(verb + ' '):
            return text[len(verb):].strip()
    return None


def _object_phrase(text: str) -> str:
    words = text.split()
    if words and words[0] in _ARTICLES:
        words = words[1:]
    if len(words) != 1:
        raise ParseError(ParseErrorReason.MALFORMED, f'expected one object noun, got {text!r}')
    return words[0]


def parse_instruction(text: str, known_objects: tuple[str, ...] = DEFAULT_OBJECTS) -> MissionPlan:
    if not isinstance(text, str) or not text.strip():
        raise ParseError(ParseErrorReason.MALFORMED, 'empty instruction')

    norm = ' '.join(text.lower().split()).rstrip('.!?').strip()
    norm = _CONDITION_RE.sub('', norm).strip()
    head, sep, tail = norm.partition(' and ')

    rest = _strip_verb(head, _FIND_VERBS)
    if rest is None:
        first = head.split()[0] if head else ''
        raise ParseError(ParseErrorReason.UNKNOWN_VERB, repr(first))
    obj = _object_phrase(rest)
    if obj not in known_objects:
        raise ParseError(ParseErrorReason.UNKNOWN_OBJECT, repr(obj))

    if sep:
        ref = _strip_verb(tail, _APPROACH_VERBS)
        if ref is None:
            if not tail:
                raise ParseError(ParseErrorReason.MALFORMED, 'dangling "and"')
            raise ParseError(ParseErrorReason.UNKNOWN_VERB, repr(tail.split()[0]))
        if ref != 'it' and _object_phrase(ref) != obj:
            raise ParseError(ParseErrorReason.MALFORMED, f'approach target {ref!r} differs from {obj!r}')

    return MissionPlan.for_target(obj)


def render_plan(plan: MissionPlan) -> str:
    return f'Find a {plan.target} and approach it once you detect it.'


# -- Contextual memory --------------------------------------------------------------

class MemoryKind(str, Enum):
    ACTION_EXECUTED = 'ActionExecuted'
    PERCEPTION_OUTCOME = 'PerceptionOutcome'
    KPI_SAMPLE = 'KpiSample'


@dataclass(frozen=True)
class MemoryRecord:
    time_us: int
    kind: MemoryKind
    payload: dict


class ContextualMemory:
    """Chronological ring of records; the oldest record is evicted first."""

    def __init__(self, capacity: int = MEMORY_CAPACITY):
        self._records: deque[MemoryRecord] = deque(maxlen=capacity)
        self.capacity = capacity
        self.evicted = 0

    def __len__(self) -> int:
        return len(self._records)

    def append(self, time_us: int, kind: MemoryKind, payload: dict) -> MemoryRecord:
        if self._records and time_us < self._records[-1].time_us:
            raise ValueError('memory records must be appended in time order')
        if len(self._records) == self.capacity:
            self.evicted += 1
        rec = MemoryRecord(time_us, kind, payload)
        self._records.append(rec)
        return rec

    def query(self, kind: MemoryKind | None = None, limit: int = 1) -> list[MemoryRecord]:
        if limit < 1:
            raise ValueError('limit must be at least 1')
        out = []
        for rec in reversed(self._records):
            if kind is None or rec.kind is kind:
                out.append(rec)
                if len(out) == limit:
                    break
        return out

    def latest(self, kind: MemoryKind) -> MemoryRecord | None:
        found = self.query(kind, 1)
        return found[0] if found else None


def query_memory(memory: ContextualMemory, kind: MemoryKind | None, limit: int) -> list[MemoryRecord]:
    return memory.query(kind, limit)


# -- Toolbox ---------------------------------------------------------------------

@dataclass(frozen=True)
class ToolDescriptor:
    name: str
    parameters: dict[str, type] = field(default_factory=dict)
    optional: frozenset[str] = frozenset()
    description: str = ''


@dataclass(frozen=True)
class ToolCall:
    name: str
    arguments: dict = field(default_factory=dict)
    issued_us: int = 0


class ToolStatus(str, Enum):
    OK = 'ok'
    UNKNOWN_TOOL = 'UnknownTool'
    INVALID_ARGUMENTS = 'InvalidArguments'
    DROPPED = 'Dropped'
    ERROR = 'Error'


@dataclass(frozen=True)
class ToolResult:
    status: ToolStatus
    payload: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status is ToolStatus.OK


ToolHandler = Callable[[ToolCall], ToolResult | dict | None]

DEFAULT_TOOLS = (
    ToolDescriptor('set_uplink_resolution', {'tier': str},
                   description='Switch the uplink video tier (Low | Mid | High).'),
    ToolDescriptor('send_velocity_command', {'vx': float, 'vy': float, 'vz': float, 'yaw_rate': float},
                   description='World-frame velocity setpoint sent over the downlink.'),
    ToolDescriptor('run_detection', {},
                   description='Submit the latest uplinked frame to the inference container.'),
    ToolDescriptor('get_kpis', {'window_ms': float}, optional=frozenset({'window_ms'}),
                   description='Windowed communication KPIs.'),
    ToolDescriptor('set_yaw_rate', {'yaw_rate': float},
                   description='Rotate in place.'),
    ToolDescriptor('move_toward', {'x': float, 'y': float, 'z': float, 'speed': float},
                   optional=frozenset({'speed'}),
                   description='Fly toward a world position, holding a stand-off distance.'),
    ToolDescriptor('hover', {}, description='Stop and hold position.'),
)


def _check_arguments(desc: ToolDescriptor, args: dict) -> str | None:
    unknown = sorted(set(args) - set(desc.parameters))
    if unknown:
        return f'unknown argument(s) {unknown}'
    for name, typ in desc.parameters.items():
        if name not in args:
            if name in desc.optional:
                continue
            return f'missing argument {name!r}'
        value = args[name]
        if typ is float:
            if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
                return f'{name!r} must be a finite number'
        elif not isinstance(value, typ):
            return f'{name!r} must be {typ.__name__}'
    return None


class Toolbox:
    """Name -> (descriptor, handler) registry; every dispatch leaves one memory record."""

    def __init__(self):
        self._tools: dict[str, tuple[ToolDescriptor, ToolHandler]] = {}

    def register(self, desc: ToolDescriptor, handler: ToolHandler) -> None:
        self._tools[desc.name] = (desc, handler)

    def names(self) -> list[str]:
        return list(self._tools)

    def descriptor(self, name: str) -> ToolDescriptor:
        return self._tools[name][0]

    def __contains__(self, name: str) -> bool:
        return name in self._tools

    def dispatch(self, call: ToolCall, memory: ContextualMemory) -> ToolResult:
        entry = self._tools.get(call.name)
        if entry is None:
            result = ToolResult(ToolStatus.UNKNOWN_TOOL, {'error': f'no tool named {call.name!r}'})
        else:
            desc, handler = entry
            problem = _check_arguments(desc, call.arguments)
            if problem:
                result = ToolResult(ToolStatus.INVALID_ARGUMENTS, {'error': problem})
            else:
                try:
                    out = handler(call)
                except Exception as e:
                    log.error(f'Tool {call.name} failed: {e}')
                    out = ToolResult(ToolStatus.ERROR, {'error': str(e)})
                if isinstance(out, ToolResult):
                    result = out
                else:
                    result = ToolResult(ToolStatus.OK, out or {})

        memory.append(call.issued_us, MemoryKind.ACTION_EXECUTED, {
            'name': call.name,
            'arguments': dict(call.arguments),
            'status': result.status.value,
        })
        return result


def dispatch_tool(toolbox: Toolbox, call: ToolCall, memory: ContextualMemory) -> ToolResult:
    return toolbox.dispatch(call, memory)


# -- Policy ----------------------------------------------------------------------

@dataclass(frozen=True)
class PolicyConfig:
    search_yaw_rate: float = 0.5
    detect_threshold: float = 0.6
    arrive_distance_m: float = 1.0
    approach_speed: float = 1.0


def next_action(
    plan: MissionPlan | None,
    memory: ContextualMemory,
    kpis: KpiSnapshot | None = None,
    policy: PolicyConfig = PolicyConfig(),
    now_us: int = 0,
) -> ToolCall:
    """
    Choose the control call for the current sub-task from the latest perception.
      Search,   nothing detected      -> set_yaw_rate(+search rate)
      Search,   detected >= threshold -> advance, move_toward(target)
      Approach, distance > arrive     -> move_toward(target)
      Approach, distance <= arrive    -> advance to Complete, hover
    KPIs are accepted for the record; no rule depends on them yet.
    """
    if plan is None or plan.finished:
        raise NoPlan('no unfinished plan to act on')

    latest = memory.latest(MemoryKind.PERCEPTION_OUTCOME)
    seen = latest.payload if latest else {}
    task = plan.current

    if task.kind is SubTaskKind.SEARCH:
        detected = seen.get('detected', False) and seen.get('confidence', 0.0) >= policy.detect_threshold
        if not detected or seen.get('target_position') is None:
            return ToolCall('set_yaw_rate', {'yaw_rate': policy.search_yaw_rate}, now_us)
        plan.target_position = tuple(seen['target_position'])
        plan.advance()
        return _move_toward(plan, policy, now_us)

    distance = seen.get('distance_m', math.inf)
    if distance <= policy.arrive_distance_m:
        plan.advance()
        return ToolCall('hover', {}, now_us)
    if plan.target_position is None and seen.get('target_position') is not None:
        plan.target_position = tuple(seen['target_position'])
    return _move_toward(plan, policy, now_us)


def _move_toward(plan: MissionPlan, policy: PolicyConfig, now_us: int) -> ToolCall:
    if plan.target_position is None:
        return ToolCall('hover', {}, now_us)
    x, y, z = plan.target_position
    return ToolCall('move_toward', {'x': x, 'y': y, 'z': z, 'speed': policy.approach_speed}, now_us)
