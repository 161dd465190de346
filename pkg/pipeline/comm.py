"""
Real-time radio stack model: per-slot processing against the slot deadline,
HARQ-bounded uplink/downlink transfers, load-dependent buffer memory and the
windowed KPIs the agent reads back.

Units: time in microseconds, memory in MiB, rates in Mbps (= bits per µs),
frame sizes in bytes (1 KB = 1000 bytes).
"""

import bisect
import logging
import math
from collections import deque
from dataclasses import dataclass
from enum import Enum

import numpy as np

from pipeline.partition import (
    Owner, Partition, PartitionLayout, allocate, effective_slowdown, release,
)

log = logging.getLogger('SC3Sim.comm')


# -- Configuration -----------------------------------------------------------------

@dataclass(frozen=True)
class SlotConfig:
    slot_us: int = 500
    nominal_proc_us: float = 300.0    # at reference_fraction
    reference_fraction: float = 0.6
    harq_max_attempts: int = 4
    harq_rtt_slots: int = 4

    def __post_init__(self):
        if self.slot_us <= 0:
            raise ValueError('slot_us must be positive')
        if not 0 < self.nominal_proc_us < self.slot_us:
            raise ValueError(f'nominal_proc_us must lie in (0, slot_us={self.slot_us})')
        if not 0 < self.reference_fraction <= 1:
            raise ValueError('reference_fraction must lie in (0, 1]')
        if self.harq_max_attempts < 1 or self.harq_rtt_slots < 1:
            raise ValueError('harq_max_attempts and harq_rtt_slots must be at least 1')

    @property
    def harq_rtt_us(self) -> int:
        return self.harq_rtt_slots * self.slot_us


@dataclass(frozen=True)
class BufferModel:
    static_mib: int = 14848
    per_mbps_mib: float = 460.0
    burst_factor: float = 2.0
    burst_on_mean_ms: float = 200.0
    burst_off_mean_ms: float = 800.0

    def __post_init__(self):
        if min(self.static_mib, self.per_mbps_mib, self.burst_on_mean_ms, self.burst_off_mean_ms) <= 0:
            raise ValueError('buffer sizes and burst durations must be positive')
        if self.burst_factor < 1:
            raise ValueError('burst_factor must be >= 1')


@dataclass(frozen=True)
class LinkConfig:
    link_capacity_mbps: float = 100.0
    propagation_us: int = 1000
    downlink_cmd_bytes: int = 256
    scheduling_delay_us: int = 2000

    def __post_init__(self):
        if self.link_capacity_mbps <= 0 or self.downlink_cmd_bytes <= 0:
            raise ValueError('link_capacity_mbps and downlink_cmd_bytes must be positive')
        if self.propagation_us < 0 or self.scheduling_delay_us < 0:
            raise ValueError('propagation and scheduling delays must be non-negative')


@dataclass(frozen=True)
class KpiSnapshot:
    t_us: int
    window_us: int
    throughput_mbps: float = 0.0
    loss_rate: float = 0.0
    deadline_miss_rate: float = 0.0
    buffer_occupancy_mib: int = 0
    avg_slot_latency_us: float = 0.0

    def to_row(self) -> dict:
        return {
            't_us': self.t_us,
            'throughput_mbps': round(self.throughput_mbps, 6),
            'loss_rate': round(self.loss_rate, 6),
            'deadline_miss_rate': round(self.deadline_miss_rate, 6),
            'buffer_occupancy_mib': self.buffer_occupancy_mib,
            'avg_slot_latency_us': round(self.avg_slot_latency_us, 3),
        }


class SlotStatus(str, Enum):
    ON_TIME = 'on_time'
    MISSED = 'missed'


@dataclass(frozen=True)
class SlotOutcome:
    status: SlotStatus
    duration_us: float

    @property
    def missed(self) -> bool:
        return self.status is SlotStatus.MISSED


@dataclass(frozen=True)
class Transfer:
    """Result of one HARQ-bounded transfer. delivered=False means Dropped."""
    delivered: bool
    latency_us: int
    attempts: int
    lost_attempts: int
    nbytes: int

    @property
    def dropped(self) -> bool:
        return not self.delivered


# -- Pure laws ---------------------------------------------------------------------

def comm_memory_demand(buf: BufferModel, offered_mbps: float, burst_on: bool) -> float:
    if offered_mbps < 0:
        raise ValueError('offered load must be non-negative')
    factor = buf.burst_factor if burst_on else 1.0
    return buf.static_mib + buf.per_mbps_mib * offered_mbps * factor


def process_slot(
    cfg: SlotConfig,
    p: Partition,
    slowdown: float,
    buffer_overflow: bool,
) -> SlotOutcome:
    if p.owner is not Owner.COMM:
        raise ValueError(f'slot processing runs on the comm partition, not {p.owner.value}')
    duration = cfg.nominal_proc_us * (cfg.reference_fraction / p.compute_fraction) * slowdown
    missed = buffer_overflow or duration > cfg.slot_us
    return SlotOutcome(SlotStatus.MISSED if missed else SlotStatus.ON_TIME, duration)


def drop_fraction(demand_mib: float, capacity_mib: float, static_mib: float) -> float:
    if demand_mib <= capacity_mib:
        return 0.0
    dynamic = demand_mib - static_mib
    if dynamic <= 0:
        # the static footprint alone does not fit
        return 1.0
    return min(1.0, (demand_mib - capacity_mib) / dynamic)


def transfer_latency_us(link: LinkConfig, cfg: SlotConfig, nbytes: int, retransmissions: int = 0) -> int:
    serialization = round(nbytes * 8 / link.link_capacity_mbps)
    return (serialization + link.propagation_us + link.scheduling_delay_us
            + retransmissions * cfg.harq_rtt_us)


def _transfer(
    link: LinkConfig,
    cfg: SlotConfig,
    nbytes: int,
    loss_probability: float,
    rng: np.random.Generator,
) -> Transfer:
    if nbytes <= 0:
        raise ValueError('transfer size must be positive')
    lost = 0
    for attempt in range(cfg.harq_max_attempts):
        # no draw on a clean link, so loss-free runs leave the RNG stream untouched
        if loss_probability > 0.0 and rng.random() < loss_probability:
            lost += 1
            continue
        return Transfer(True, transfer_latency_us(link, cfg, nbytes, attempt), attempt + 1, lost, nbytes)
    return Transfer(
        False,
        transfer_latency_us(link, cfg, nbytes, cfg.harq_max_attempts - 1),
        cfg.harq_max_attempts,
        lost,
        nbytes,
    )


def transfer_uplink(
    link: LinkConfig,
    cfg: SlotConfig,
    frame_bytes: int,
    loss_probability: float,
    rng: np.random.Generator,
) -> Transfer:
    return _transfer(link, cfg, frame_bytes, loss_probability, rng)


def transfer_downlink(
    link: LinkConfig,
    cfg: SlotConfig,
    loss_probability: float,
    rng: np.random.Generator,
) -> Transfer:
    return _transfer(link, cfg, link.downlink_cmd_bytes, loss_probability, rng)


# -- History and KPIs ---------------------------------------------------------------

class CommHistory:
    """Per-slot samples, kept as parallel lists so windows can be bisected."""

    def __init__(self, slot_us: int = 500):
        self.slot_us = slot_us
        self.times: list[int] = []
        self.durations: list[float] = []
        self.missed: list[bool] = []
        self.offered_bits: list[float] = []
        self.dropped_bits: list[float] = []
        self.buffer_mib: list[int] = []

    def __len__(self) -> int:
        return len(self.times)

    def record(self, t_us: int, outcome: SlotOutcome, offered_bits: float,
               dropped_bits: float, buffer_mib: int) -> None:
        self.times.append(t_us)
        self.durations.append(outcome.duration_us)
        self.missed.append(outcome.missed)
        self.offered_bits.append(offered_bits)
        self.dropped_bits.append(dropped_bits)
        self.buffer_mib.append(buffer_mib)


def kpi_snapshot(history: CommHistory, window_us: int, now_us: int | None = None) -> KpiSnapshot:
    """KPIs over the slots with time in (now - window, now]."""
    if window_us <= 0:
        raise ValueError('KPI window must be positive')
    if now_us is None:
        now_us = history.times[-1] if history.times else 0
    hi = bisect.bisect_right(history.times, now_us)
    lo = bisect.bisect_right(history.times, now_us - window_us, 0, hi)
    n = hi - lo
    if n == 0:
        return KpiSnapshot(now_us, window_us)

    offered = math.fsum(history.offered_bits[lo:hi])
    dropped = math.fsum(history.dropped_bits[lo:hi])
    return KpiSnapshot(
        t_us=now_us,
        window_us=window_us,
        throughput_mbps=(offered - dropped) / (n * history.slot_us),
        loss_rate=dropped / offered if offered > 0 else 0.0,
        deadline_miss_rate=sum(history.missed[lo:hi]) / n,
        buffer_occupancy_mib=history.buffer_mib[hi - 1],
        avg_slot_latency_us=math.fsum(history.durations[lo:hi]) / n,
    )


class LossWindow:
    """Running stream-loss ratio over a sliding time window."""

    def __init__(self, window_us: int):
        self.window_us = window_us
        self._samples: deque[tuple[int, float, float]] = deque()
        self._offered = 0.0
        self._dropped = 0.0

    def push(self, t_us: int, offered_bits: float, dropped_bits: float) -> None:
        self._samples.append((t_us, offered_bits, dropped_bits))
        self._offered += offered_bits
        self._dropped += dropped_bits
        while self._samples and self._samples[0][0] <= t_us - self.window_us:
            _, o, d = self._samples.popleft()
            self._offered -= o
            self._dropped -= d

    @property
    def ratio(self) -> float:
        return self._dropped / self._offered if self._offered > 0 else 0.0


# -- Stateful workload ---------------------------------------------------------------

class CommWorkload:
    """
    The comm container of one run: owns its partition ledger, the burst state,
    the offered stream load and the slot history.
    """

    def __init__(self, layout: PartitionLayout, slot: SlotConfig, buffer: BufferModel,
                 link: LinkConfig, j_mean: float = 0.8):
        self.layout = layout
        self.partition = layout.by_owner(Owner.COMM)
        self.slot = slot
        self.buffer = buffer
        self.link = link
        self.j_mean = j_mean

        self.offered_mbps = 0.0
        self.burst_on = False
        self.overflow = False
        self.loss_probability = 0.0
        self.history = CommHistory(slot.slot_us)

        self.transfers = 0
        self.attempts = 0
        self.lost_attempts = 0
        self.dropped_transfers = 0

    @property
    def demand_mib(self) -> float:
        return comm_memory_demand(self.buffer, self.offered_mbps, self.burst_on)

    def start(self, offered_mbps: float) -> None:
        """Container start: allocate the static footprint plus the initial buffer."""
        self.offered_mbps = offered_mbps
        self._rebalance()
        log.debug(f'Comm container resident on {self.partition.id}: '
                  f'{self.partition.memory_used_mib}/{self.partition.memory_capacity_mib} MiB')

    def set_offered_load(self, offered_mbps: float) -> None:
        self.offered_mbps = offered_mbps
        self._rebalance()

    def set_burst(self, on: bool) -> None:
        self.burst_on = on
        self._rebalance()

    def _rebalance(self) -> None:
        demand = self.demand_mib
        cap = self.partition.memory_capacity_mib
        target = min(math.ceil(demand), cap)
        delta = target - self.partition.memory_used_mib
        if delta > 0:
            self.partition = allocate(self.partition, delta)
        elif delta < 0:
            self.partition = release(self.partition, -delta)
        self.overflow = demand > cap
        self.loss_probability = drop_fraction(demand, cap, self.buffer.static_mib)

    def process(self, now_us: int, inference_active: bool, rng: np.random.Generator) -> SlotOutcome:
        slowdown = effective_slowdown(self.partition, self.layout, inference_active, rng, self.j_mean)
        outcome = process_slot(self.slot, self.partition, slowdown, self.overflow)
        offered = self.offered_mbps * self.slot.slot_us
        dropped = offered * self.loss_probability
        self.history.record(now_us, outcome, offered, dropped, self.partition.memory_used_mib)
        return outcome

    def send(self, nbytes: int, rng: np.random.Generator) -> Transfer:
        t = transfer_uplink(self.link, self.slot, nbytes, self.loss_probability, rng)
        self._account(t)
        return t

    def send_command(self, rng: np.random.Generator) -> Transfer:
        t = transfer_downlink(self.link, self.slot, self.loss_probability, rng)
        self._account(t)
        return t

    def _account(self, t: Transfer) -> None:
        self.transfers += 1
        self.attempts += t.attempts
        self.lost_attempts += t.lost_attempts
        if t.dropped:
            self.dropped_transfers += 1
