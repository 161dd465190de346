"""
Accelerator partitioning: hard-isolated compute/memory slices (MIG-style),
per-slice memory ledgers, admission and the isolation contract.

Ledger granularity is 1 MiB. Partitions are immutable values; allocate() and
release() return a new Partition, so touching one slice can never change another.
"""

import logging
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

log = logging.getLogger('SC3Sim.partition')

_EPS = 1e-9


class Owner(str, Enum):
    COMM = 'comm'
    INFERENCE = 'inference'


class IsolationMode(str, Enum):
    ISOLATED = 'Isolated'
    SHARED = 'Shared'


class Strategy(str, Enum):
    PROPOSED = 'Proposed'
    STRATEGY_A = 'StrategyA'
    STRATEGY_B = 'StrategyB'
    SHARED_NO_ISOLATION = 'SharedNoIsolation'
    CUSTOM = 'Custom'


class ViolationKind(str, Enum):
    SUM_COMPUTE_EXCEEDED = 'SumComputeExceeded'
    SUM_MEMORY_EXCEEDED = 'SumMemoryExceeded'
    INSTANCE_CAP_EXCEEDED = 'InstanceCapExceeded'
    DUPLICATE_OWNER = 'DuplicateOwner'
    INVALID_COMPUTE_FRACTION = 'InvalidComputeFraction'
    NON_POSITIVE_CAPACITY = 'NonPositiveCapacity'
    USED_EXCEEDS_CAPACITY = 'UsedExceedsCapacity'


# -- Errors --------------------------------------------------------------------

class PartitionError(Exception):
    pass


class Oom(PartitionError):
    def __init__(self, partition: 'Partition', requested_mib: int):
        super().__init__(
            f'OOM on {partition.id} ({partition.owner.value}): requested {requested_mib} MiB, '
            f'free {partition.free_mib} of {partition.memory_capacity_mib} MiB'
        )
        self.partition = partition
        self.requested_mib = requested_mib


class ReleaseUnderflow(PartitionError):
    pass


class InvalidCustomLayout(PartitionError):
    def __init__(self, violations: list['Violation']):
        super().__init__('; '.join(str(v) for v in violations))
        self.violations = violations


# -- Types ---------------------------------------------------------------------

@dataclass(frozen=True)
class AcceleratorSpec:
    total_memory_mib: int = 81920
    max_instance_memory_mib: int = 40960
    total_compute: float = 1.0

    def __post_init__(self):
        if self.total_memory_mib <= 0 or self.max_instance_memory_mib <= 0:
            raise PartitionError('accelerator memory sizes must be positive')
        if self.max_instance_memory_mib > self.total_memory_mib:
            raise PartitionError('max_instance_memory_mib exceeds total_memory_mib')
        if not 0 < self.total_compute <= 1.0:
            raise PartitionError('total_compute must lie in (0, 1]')


@dataclass(frozen=True)
class Partition:
    id: str
    owner: Owner
    compute_fraction: float
    memory_capacity_mib: int
    memory_used_mib: int = 0

    @property
    def free_mib(self) -> int:
        return self.memory_capacity_mib - self.memory_used_mib

    def to_dict(self) -> dict:
        return {
            'owner': self.owner.value,
            'compute_fraction': self.compute_fraction,
            'memory_capacity_mib': self.memory_capacity_mib,
        }


@dataclass(frozen=True)
class PartitionLayout:
    partitions: tuple[Partition, ...]
    isolation_mode: IsolationMode = IsolationMode.ISOLATED

    def by_owner(self, owner: Owner) -> Partition:
        for p in self.partitions:
            if p.owner is owner:
                return p
        raise KeyError(f'no partition owned by {owner.value}')

    def with_partition(self, updated: Partition) -> 'PartitionLayout':
        """Return a layout with the partition of the same id replaced."""
        parts = tuple(updated if p.id == updated.id else p for p in self.partitions)
        return replace(self, partitions=parts)

    def to_list(self) -> list[dict]:
        return [p.to_dict() for p in self.partitions]


@dataclass(frozen=True)
class Violation:
    kind: ViolationKind
    detail: str = field(default='', compare=False)

    def __str__(self) -> str:
        return f'{self.kind.value}: {self.detail}' if self.detail else self.kind.value


# -- Layout planning -------------------------------------------------------------

# (comm_memory, inference_memory) per named strategy; the compute split is fixed.
_COMM_COMPUTE = 0.6
_INFERENCE_COMPUTE = 0.4


def _strategy_memory(spec: AcceleratorSpec, strategy: Strategy) -> tuple[int, int]:
    quarter = spec.total_memory_mib // 4
    cap = spec.max_instance_memory_mib
    if strategy in (Strategy.PROPOSED, Strategy.SHARED_NO_ISOLATION):
        return cap, cap
    if strategy is Strategy.STRATEGY_A:
        return cap, quarter
    if strategy is Strategy.STRATEGY_B:
        return quarter, cap
    raise ValueError(f'{strategy.value} has no built-in memory split')


def build_layout(
    entries: list[dict],
    isolation_mode: IsolationMode = IsolationMode.ISOLATED,
) -> PartitionLayout:
    """Build a layout from scenario-file entries {owner, compute_fraction, memory_capacity_mib}."""
    parts = []
    for i, entry in enumerate(entries):
        owner = Owner(entry['owner'])
        parts.append(Partition(
            id=f'gi{i}-{owner.value}',
            owner=owner,
            compute_fraction=float(entry['compute_fraction']),
            memory_capacity_mib=int(entry['memory_capacity_mib']),
        ))
    return PartitionLayout(tuple(parts), isolation_mode)


def plan_layout(
    spec: AcceleratorSpec,
    strategy: Strategy,
    custom: PartitionLayout | None = None,
) -> PartitionLayout:
    """
    Resolve a strategy name into a concrete layout.
    Custom layouts are validated and returned as given; violations raise
    InvalidCustomLayout.
    """
    if strategy is Strategy.CUSTOM:
        if custom is None:
            raise InvalidCustomLayout([Violation(ViolationKind.NON_POSITIVE_CAPACITY, 'no custom layout given')])
        violations = validate_layout(spec, custom)
        if violations:
            raise InvalidCustomLayout(violations)
        return custom

    comm_mib, inf_mib = _strategy_memory(spec, strategy)
    mode = IsolationMode.SHARED if strategy is Strategy.SHARED_NO_ISOLATION else IsolationMode.ISOLATED
    layout = PartitionLayout(
        partitions=(
            Partition('gi0-comm', Owner.COMM, _COMM_COMPUTE, comm_mib),
            Partition('gi1-inference', Owner.INFERENCE, _INFERENCE_COMPUTE, inf_mib),
        ),
        isolation_mode=mode,
    )
    log.debug(f'Planned {strategy.value}: comm {comm_mib} MiB, inference {inf_mib} MiB, {mode.value}')
    return layout


def validate_layout(spec: AcceleratorSpec, layout: PartitionLayout) -> list[Violation]:
    """Return every broken layout invariant; an empty list means the layout is valid."""
    violations: list[Violation] = []
    owners: set[Owner] = set()
    total_compute = 0.0
    total_memory = 0

    for p in layout.partitions:
        if not 0 < p.compute_fraction <= 1.0:
            violations.append(Violation(ViolationKind.INVALID_COMPUTE_FRACTION, f'{p.id}={p.compute_fraction}'))
        if p.memory_capacity_mib <= 0:
            violations.append(Violation(ViolationKind.NON_POSITIVE_CAPACITY, p.id))
        if p.memory_capacity_mib > spec.max_instance_memory_mib:
            violations.append(Violation(
                ViolationKind.INSTANCE_CAP_EXCEEDED,
                f'{p.id}={p.memory_capacity_mib} > {spec.max_instance_memory_mib} MiB',
            ))
        if p.memory_used_mib > p.memory_capacity_mib:
            violations.append(Violation(ViolationKind.USED_EXCEEDS_CAPACITY, p.id))
        if p.owner in owners:
            violations.append(Violation(ViolationKind.DUPLICATE_OWNER, p.owner.value))
        owners.add(p.owner)
        total_compute += p.compute_fraction
        total_memory += p.memory_capacity_mib

    if total_compute > spec.total_compute + _EPS:
        violations.append(Violation(ViolationKind.SUM_COMPUTE_EXCEEDED, f'{total_compute:.3f}'))
    if total_memory > spec.total_memory_mib:
        violations.append(Violation(ViolationKind.SUM_MEMORY_EXCEEDED, f'{total_memory} MiB'))
    return violations


# -- Ledger ----------------------------------------------------------------------

def allocate(p: Partition, amount_mib: int) -> Partition:
    if amount_mib < 0:
        raise ValueError('allocation amount must be non-negative')
    if amount_mib > p.free_mib:
        raise Oom(p, amount_mib)
    if amount_mib == 0:
        return p
    return replace(p, memory_used_mib=p.memory_used_mib + amount_mib)


def release(p: Partition, amount_mib: int) -> Partition:
    if amount_mib < 0:
        raise ValueError('release amount must be non-negative')
    if amount_mib > p.memory_used_mib:
        raise ReleaseUnderflow(
            f'{p.id}: release {amount_mib} MiB but only {p.memory_used_mib} MiB in use'
        )
    if amount_mib == 0:
        return p
    return replace(p, memory_used_mib=p.memory_used_mib - amount_mib)


# -- Interference ----------------------------------------------------------------

def effective_slowdown(
    p: Partition,
    layout: PartitionLayout,
    concurrent_inference_active: bool,
    rng: np.random.Generator,
    j_mean: float = 0.8,
) -> float:
    """
    Execution-time multiplier for work on partition `p`.
    Isolated layouts never interfere. In Shared mode an active inference job
    inflates the time by 1 + J with J ~ Exponential(j_mean); the RNG is only
    drawn from in that case.
    """
    if all(q.id != p.id for q in layout.partitions):
        raise KeyError(f'{p.id} is not part of the layout')
    if layout.isolation_mode is IsolationMode.ISOLATED or not concurrent_inference_active:
        return 1.0
    return 1.0 + float(rng.exponential(j_mean))
