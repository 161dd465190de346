"""
Deterministic discrete-event kernel.

Time is an integer count of microseconds since run start. Events are ordered
by (time_us, seq); seq is a per-run insertion counter, so events scheduled for
the same instant dispatch in FIFO order. One seeded numpy Generator is shared
by every handler of a run and drawn from in dispatch order.

Every dispatched event is serialised into the TraceLog as one JSON line:
  {"time_us": .., "seq": .., "kind": .., "payload": {..}}
Handlers may attach outcome fields to the line of the event they are handling
via Kernel.note(). The SHA-256 of the full byte stream is the run fingerprint.
"""

import hashlib
import heapq
import itertools
import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterator

import numpy as np

log = logging.getLogger('SC3Sim.kernel')


class EventKind(str, Enum):
    SLOT_TICK = 'SlotTick'
    FRAME_CAPTURED = 'FrameCaptured'
    UPLINK_DELIVERED = 'UplinkDelivered'
    INFERENCE_DONE = 'InferenceDone'
    PLAN_STEP = 'PlanStep'
    COMMAND_DELIVERED = 'CommandDelivered'
    BURST_ON = 'BurstOn'
    BURST_OFF = 'BurstOff'
    CONTAINER_START = 'ContainerStart'
    MISSION_END = 'MissionEnd'


# -- Errors --------------------------------------------------------------------

class KernelError(Exception):
    pass


class SchedulingInPast(KernelError):
    pass


class EmptyQueue(KernelError):
    pass


class HandlerFault(KernelError):
    """A handler raised while processing `event`."""
    def __init__(self, event: 'SimEvent', cause: BaseException):
        super().__init__(f'{event.kind.value} at t={event.time_us}us (seq {event.seq}): {cause}')
        self.event = event
        self.cause = cause


# -- Events and queue ----------------------------------------------------------

@dataclass(frozen=True)
class SimEvent:
    time_us: int
    seq: int
    kind: EventKind
    payload: dict = field(default_factory=dict)

    @property
    def key(self) -> tuple[int, int]:
        return self.time_us, self.seq


class EventQueue:
    """Min-heap keyed by (time_us, seq) with a monotone clock."""

    def __init__(self):
        self._heap: list[tuple[int, int, SimEvent]] = []
        self._counter = itertools.count()
        self.now_us = 0

    def __len__(self) -> int:
        return len(self._heap)

    def make(self, time_us: int, kind: EventKind, payload: dict | None = None) -> SimEvent:
        """Build an event stamped with the next insertion sequence number."""
        return SimEvent(int(time_us), next(self._counter), kind, payload or {})

    def schedule(self, ev: SimEvent) -> SimEvent:
        if ev.time_us < self.now_us:
            raise SchedulingInPast(
                f'{ev.kind.value} at t={ev.time_us}us is before now={self.now_us}us'
            )
        heapq.heappush(self._heap, (ev.time_us, ev.seq, ev))
        return ev

    def peek_time(self) -> int | None:
        return self._heap[0][0] if self._heap else None

    def advance(self) -> tuple[int, SimEvent]:
        """Pop the minimum (time, seq) event and move the clock to its time."""
        if not self._heap:
            raise EmptyQueue('advance() on an empty event queue')
        time_us, _, ev = heapq.heappop(self._heap)
        self.now_us = time_us
        return time_us, ev


def schedule(queue: EventQueue, ev: SimEvent) -> EventQueue:
    queue.schedule(ev)
    return queue


def advance(queue: EventQueue) -> tuple[int, SimEvent]:
    return queue.advance()


# -- Trace ----------------------------------------------------------------------

def _canonical_line(time_us: int, seq: int, kind: str, payload: dict) -> str:
    body = json.dumps(payload, sort_keys=True, separators=(',', ':'), ensure_ascii=True)
    return f'{{"time_us":{time_us},"seq":{seq},"kind":"{kind}","payload":{body}}}'


class TraceLog:
    """Append-only JSON-lines record of every dispatched event."""

    def __init__(self):
        self._lines: list[str] = []
        self._sha = hashlib.sha256()

    def append(self, ev: SimEvent, notes: dict | None = None) -> None:
        payload = dict(ev.payload)
        if notes:
            payload.update(notes)
        line = _canonical_line(ev.time_us, ev.seq, ev.kind.value, payload)
        self._lines.append(line)
        self._sha.update(line.encode('utf-8'))
        self._sha.update(b'\n')

    def __len__(self) -> int:
        return len(self._lines)

    def __iter__(self) -> Iterator[dict]:
        for line in self._lines:
            yield json.loads(line)

    def lines(self) -> list[str]:
        return list(self._lines)

    def to_jsonl(self) -> str:
        return ''.join(line + '\n' for line in self._lines)

    def digest(self) -> str:
        return self._sha.copy().hexdigest()


# -- Kernel ----------------------------------------------------------------------

Handler = Callable[[SimEvent], None]


class Kernel:
    """
    Single-threaded event loop for one run.
    Owns the event queue, the run RNG and the trace. Handlers are registered per
    EventKind; a kind without a handler is still traced.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self.queue = EventQueue()
        self.rng = np.random.default_rng(self.seed)
        self.trace = TraceLog()
        self._handlers: dict[EventKind, Handler] = {}
        self._notes: dict | None = None
        self._halted = False

    @property
    def now_us(self) -> int:
        return self.queue.now_us

    @property
    def halted(self) -> bool:
        return self._halted

    def on(self, kind: EventKind, handler: Handler) -> None:
        self._handlers[kind] = handler

    def at(self, time_us: int, kind: EventKind, payload: dict | None = None) -> SimEvent:
        return self.queue.schedule(self.queue.make(time_us, kind, payload))

    def after(self, delay_us: int, kind: EventKind, payload: dict | None = None) -> SimEvent:
        return self.at(self.now_us + int(delay_us), kind, payload)

    def note(self, **fields) -> None:
        """Attach fields to the trace line of the event being dispatched."""
        if self._notes is not None:
            self._notes.update(fields)

    def halt(self) -> None:
        self._halted = True

    def run_until(self, t_end_us: int) -> TraceLog:
        """
        Dispatch every queued event with time <= t_end_us in (time, seq) order,
        stopping early after the event that calls halt().
        """
        if t_end_us < self.now_us:
            raise SchedulingInPast(f'run_until({t_end_us}) is before now={self.now_us}us')

        while not self._halted:
            nxt = self.queue.peek_time()
            if nxt is None or nxt > t_end_us:
                break
            _, ev = self.queue.advance()
            self._notes = {}
            handler = self._handlers.get(ev.kind)
            try:
                if handler is not None:
                    handler(ev)
            except KernelError:
                raise
            except Exception as e:
                raise HandlerFault(ev, e) from e
            finally:
                notes, self._notes = self._notes, None
            self.trace.append(ev, notes)

        if not self._halted:
            self.queue.now_us = max(self.queue.now_us, t_end_us)
        return self.trace


def run_until(world: Kernel, t_end_us: int) -> TraceLog:
    return world.run_until(t_end_us)
