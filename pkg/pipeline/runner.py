"""
One simulated mission: wires the kernel, both containers, the agent and the
drone together and drives the closed perception-reasoning-control loop.

Event flow of a loop:
  FrameCaptured -> (uplink) -> UplinkDelivered -> run_detection
  -> InferenceDone -> (reasoning) -> PlanStep -> control tool
  -> (downlink) -> CommandDelivered -> next FrameCaptured
SlotTicks run every slot throughout; BurstOn/BurstOff toggle the comm
buffer load; MissionEnd halts the run.
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from pipeline.brain import (
    DEFAULT_TOOLS, ContextualMemory, MemoryKind, PolicyConfig, SubTaskKind, ToolCall, ToolResult,
    ToolStatus, Toolbox, next_action, parse_instruction,
)
from pipeline.comm import CommWorkload, KpiSnapshot, LossWindow, kpi_snapshot
from pipeline.inference import InferenceEngine, InferenceJob, ResolutionTier
from pipeline.kernel import EventKind, Kernel, SimEvent, TraceLog
from pipeline.partition import Oom, Owner
from pipeline.scenario import Scenario
from pipeline.world import (
    CommandMode, Drone, DroneCommand, Frame, MissionStatus, capture_frame, detection_check, mission_status,
)

log = logging.getLogger('SC3Sim.runner')


class Outcome(str, Enum):
    SUCCESS = 'Success'
    OOM_AT_STARTUP = 'OomAtStartup'
    TIMEOUT = 'Timeout'
    LINK_FAILURE = 'LinkFailure'
    COMM_ONLY = 'CommOnly'

    @property
    def failed(self) -> bool:
        return self in (Outcome.OOM_AT_STARTUP, Outcome.TIMEOUT, Outcome.LINK_FAILURE)


# -- Result types ----------------------------------------------------------------

@dataclass(frozen=True)
class LoopTrace:
    loop: int
    start_us: int
    t_capture_us: int
    t_uplink_us: int
    t_infer_us: int
    t_reason_us: int
    t_downlink_us: int
    confidence: float
    subtask: SubTaskKind
    tier: ResolutionTier
    distance_m: float

    @property
    def total_us(self) -> int:
        return self.t_capture_us + self.t_uplink_us + self.t_infer_us + self.t_reason_us + self.t_downlink_us

    def to_row(self) -> dict:
        return {
            'loop': self.loop,
            'start_us': self.start_us,
            't_capture_us': self.t_capture_us,
            't_uplink_us': self.t_uplink_us,
            't_infer_us': self.t_infer_us,
            't_reason_us': self.t_reason_us,
            't_downlink_us': self.t_downlink_us,
            'total_us': self.total_us,
            'confidence': round(self.confidence, 6),
            'subtask': self.subtask.value,
            'tier': self.tier.value,
            'distance_m': round(self.distance_m, 4),
        }


@dataclass(frozen=True)
class RunSummary:
    scenario: str
    strategy: str
    tier: str
    seed: int
    outcome: Outcome
    loops: int
    mean_loop_latency_ms: float
    p95_loop_latency_ms: float
    mean_capture_ms: float
    mean_uplink_ms: float
    mean_infer_ms: float
    mean_reason_ms: float
    mean_downlink_ms: float
    loss_rate: float
    deadline_miss_rate: float
    oom_events: int
    stream_mbps: float
    mean_confidence: float
    transfer_loss_rate: float
    dropped_transfers: int
    slot_latency_mean_us: float
    slot_latency_std_us: float
    slot_count: int
    sim_time_s: float
    digest: str

    def to_row(self) -> dict:
        row = {}
        for name in self.__dataclass_fields__:
            value = getattr(self, name)
            if isinstance(value, Enum):
                value = value.value
            elif isinstance(value, float):
                value = round(value, 6)
            row[name] = value
        return row


@dataclass
class RunResult:
    scenario: Scenario
    summary: RunSummary
    trace: TraceLog
    loops: list[LoopTrace] = field(default_factory=list)
    kpis: list[KpiSnapshot] = field(default_factory=list)
    slot_durations_us: list[float] = field(default_factory=list)
    slot_times_us: list[int] = field(default_factory=list)
    slot_missed: list[bool] = field(default_factory=list)

    @property
    def digest(self) -> str:
        return self.summary.digest

    @property
    def outcome(self) -> Outcome:
        return self.summary.outcome


# -- Run -------------------------------------------------------------------------

@dataclass
class _LoopState:
    index: int
    start_us: int
    tier: ResolutionTier
    subtask: SubTaskKind
    frame: Frame | None = None
    uplink_us: int = 0
    uplink_done_us: int = 0
    infer_us: int = 0
    confidence: float = 0.0
    plan_us: int = 0
    downlink_us: int = 0


class Sc3Run:
    """
    Event handlers and state of one run. Use run_scenario() unless a test needs
    to poke at the intermediate state.
    """

    def __init__(self, scenario: Scenario, inference_load: bool = True):
        s = scenario
        self.scenario = s
        self.inference_load = inference_load
        self.kernel = Kernel(s.seed)
        self.comm = CommWorkload(s.layout, s.slot, s.buffer, s.link, s.j_mean)
        self.engine = (InferenceEngine(s.model, s.layout.by_owner(Owner.INFERENCE), s.tiers)
                       if inference_load else None)
        self.drone = Drone(s.world)
        self.plan = parse_instruction(s.instruction, s.brain.known_objects)
        self.memory = ContextualMemory(s.brain.memory_capacity)
        self.policy = PolicyConfig(
            search_yaw_rate=s.brain.search_yaw_rate,
            detect_threshold=s.confidence.detect_threshold,
            arrive_distance_m=s.world.arrive_distance_m,
            approach_speed=s.brain.approach_speed,
        )
        self.toolbox = self._build_toolbox()
        self.tier = s.tier.for_phase(self.plan.current.kind)

        self.outcome: Outcome | None = None
        self.loops: list[LoopTrace] = []
        self.kpis: list[KpiSnapshot] = []
        self._loop: _LoopState | None = None
        self._loop_count = 0
        self._pending_command: DroneCommand | None = None
        self._last_kpis: KpiSnapshot | None = None
        self._tool_notes: list[dict] = []
        self._loss_window = LossWindow(int(round(s.link_failure_window_s * 1e6)))
        self._kpi_period_us = max(1, int(round(s.kpi_period_ms * 1000)))
        self._kpi_window_us = max(1, int(round(s.kpi_window_ms * 1000)))
        self._next_kpi_us = self._kpi_period_us

        k = self.kernel
        k.on(EventKind.CONTAINER_START, self._on_container_start)
        k.on(EventKind.SLOT_TICK, self._on_slot_tick)
        k.on(EventKind.BURST_ON, self._on_burst)
        k.on(EventKind.BURST_OFF, self._on_burst)
        k.on(EventKind.FRAME_CAPTURED, self._on_frame_captured)
        k.on(EventKind.UPLINK_DELIVERED, self._on_uplink_delivered)
        k.on(EventKind.INFERENCE_DONE, self._on_inference_done)
        k.on(EventKind.PLAN_STEP, self._on_plan_step)
        k.on(EventKind.COMMAND_DELIVERED, self._on_command_delivered)
        k.on(EventKind.MISSION_END, self._on_mission_end)

    @property
    def ended(self) -> bool:
        return self.outcome is not None

    # -- Toolbox ---------------------------------------------------------------

    def _build_toolbox(self) -> Toolbox:
        handlers = {
            'set_uplink_resolution': self._tool_set_uplink_resolution,
            'send_velocity_command': lambda c: self._downlink(DroneCommand(
                CommandMode.VELOCITY, (c.arguments['vx'], c.arguments['vy'], c.arguments['vz']),
                c.arguments['yaw_rate'])),
            'run_detection': self._tool_run_detection,
            'get_kpis': self._tool_get_kpis,
            'set_yaw_rate': lambda c: self._downlink(DroneCommand(yaw_rate=c.arguments['yaw_rate'])),
            'move_toward': lambda c: self._downlink(DroneCommand(
                CommandMode.GOTO, target=(c.arguments['x'], c.arguments['y'], c.arguments['z']),
                speed=c.arguments.get('speed', self.policy.approach_speed))),
            'hover': lambda c: self._downlink(DroneCommand.hover()),
        }
        box = Toolbox()
        for desc in DEFAULT_TOOLS:
            box.register(desc, handlers[desc.name])
        return box

    def _call(self, name: str, arguments: dict | None = None) -> ToolResult:
        return self._dispatch(ToolCall(name, arguments or {}, self.kernel.now_us))

    def _dispatch(self, call: ToolCall) -> ToolResult:
        result = self.toolbox.dispatch(call, self.memory)
        self._tool_notes.append({'name': call.name, 'arguments': call.arguments, 'status': result.status.value})
        self.kernel.note(tools=list(self._tool_notes))
        if not result.ok:
            log.debug(f'Tool {call.name} -> {result.status.value} {result.payload}')
        return result

    def _tool_set_uplink_resolution(self, call: ToolCall) -> dict:
        tier = ResolutionTier(call.arguments['tier'])
        self.tier = tier
        self.comm.set_offered_load(self.scenario.tiers[tier].stream_mbps)
        return {'tier': tier.value, 'stream_mbps': self.comm.offered_mbps}

    def _tool_run_detection(self, call: ToolCall) -> dict:
        loop = self._loop
        if loop is None or loop.frame is None:
            raise RuntimeError('no uplinked frame to run detection on')
        job = InferenceJob(loop.frame, loop.tier, call.issued_us, self.engine.partition.id, loop.index)
        ev = self.engine.submit(job, self.kernel)
        return {'loop': loop.index, 'done_us': ev.time_us}

    def _tool_get_kpis(self, call: ToolCall) -> dict:
        window_us = int(round(call.arguments['window_ms'] * 1000)) if 'window_ms' in call.arguments \
            else self._kpi_window_us
        snap = kpi_snapshot(self.comm.history, window_us, call.issued_us)
        self._last_kpis = snap
        row = snap.to_row()
        self.memory.append(call.issued_us, MemoryKind.KPI_SAMPLE, row)
        return row

    def _downlink(self, cmd: DroneCommand) -> ToolResult:
        t = self.comm.send_command(self.kernel.rng)
        payload = {'latency_us': t.latency_us, 'attempts': t.attempts}
        if t.dropped:
            return ToolResult(ToolStatus.DROPPED, payload)
        self._pending_command = cmd
        self.kernel.after(t.latency_us, EventKind.COMMAND_DELIVERED,
                          {'loop': self._loop.index, 'command': cmd.to_dict()})
        return ToolResult(ToolStatus.OK, payload)

    # -- Loop bookkeeping ----------------------------------------------------------

    def _begin_loop(self, start_us: int) -> None:
        self._loop_count += 1
        self._loop = _LoopState(self._loop_count, start_us, self.tier, self.plan.current.kind)
        self.kernel.at(start_us + self.scenario.world.frame_period_us, EventKind.FRAME_CAPTURED,
                       {'loop': self._loop_count, 'tier': self.tier.value})

    def _restart_loop(self, resume_us: int, reason: str) -> None:
        log.debug(f'Loop {self._loop.index} abandoned at t={self.kernel.now_us}us: {reason}')
        self.kernel.note(abandoned=reason)
        self._begin_loop(resume_us)

    def _end(self, outcome: Outcome) -> None:
        if self.ended:
            return
        self.outcome = outcome
        self.kernel.at(self.kernel.now_us, EventKind.MISSION_END, {'outcome': outcome.value})

    # -- Handlers --------------------------------------------------------------

    def _on_container_start(self, ev: SimEvent) -> None:
        owner = Owner(ev.payload['owner'])
        if owner is Owner.COMM:
            self.comm.start(self.scenario.tiers[self.tier].stream_mbps)
            self.kernel.note(used_mib=self.comm.partition.memory_used_mib, overflow=self.comm.overflow)
            return
        try:
            self.engine.start()
        except Oom as e:
            log.warning(f'Inference container failed to start: {e}')
            self.kernel.note(oom=True, requested_mib=e.requested_mib)
            self._end(Outcome.OOM_AT_STARTUP)
            return
        self.kernel.note(used_mib=self.engine.partition.memory_used_mib)
        self._begin_loop(ev.time_us)

    def _on_slot_tick(self, ev: SimEvent) -> None:
        now = ev.time_us
        busy = self.engine.busy if self.engine is not None else False
        outcome = self.comm.process(now, busy, self.kernel.rng)
        history = self.comm.history
        self._loss_window.push(now, history.offered_bits[-1], history.dropped_bits[-1])
        self.kernel.note(duration_us=round(outcome.duration_us, 3), missed=outcome.missed)

        if now >= self._next_kpi_us:
            self.kpis.append(kpi_snapshot(history, self._kpi_window_us, now))
            self._next_kpi_us += self._kpi_period_us

        window_full = now + self.scenario.slot.slot_us >= self._loss_window.window_us
        if (self.inference_load and window_full
                and self._loss_window.ratio > self.scenario.link_failure_loss):
            log.warning(f'Link failure at t={now}us: windowed loss {self._loss_window.ratio:.3f}')
            self._end(Outcome.LINK_FAILURE)
        self.kernel.after(self.scenario.slot.slot_us, EventKind.SLOT_TICK)

    def _on_burst(self, ev: SimEvent) -> None:
        on = ev.kind is EventKind.BURST_ON
        self.comm.set_burst(on)
        self.kernel.note(demand_mib=round(self.comm.demand_mib, 3),
                         loss_probability=round(self.comm.loss_probability, 6))
        self._schedule_burst(on)

    def _schedule_burst(self, currently_on: bool) -> None:
        buf = self.scenario.buffer
        mean_ms = buf.burst_on_mean_ms if currently_on else buf.burst_off_mean_ms
        dt = max(1, int(round(self.kernel.rng.exponential(mean_ms * 1000))))
        self.kernel.after(dt, EventKind.BURST_OFF if currently_on else EventKind.BURST_ON)

    def _on_frame_captured(self, ev: SimEvent) -> None:
        if self.ended:
            return
        loop = self._loop
        state = self.drone.advance_to(ev.time_us)
        loop.frame = capture_frame(self.scenario.world, state, loop.tier, ev.time_us,
                                   self.scenario.confidence.fov_deg)
        t = self.comm.send(self.scenario.tiers[loop.tier].frame_bytes, self.kernel.rng)
        self.kernel.note(distance_m=round(loop.frame.distance_m, 4), in_fov=loop.frame.in_fov,
                         attempts=t.attempts, delivered=t.delivered)
        if t.dropped:
            self._restart_loop(ev.time_us + t.latency_us, 'uplink dropped')
            return
        loop.uplink_us = t.latency_us
        self.kernel.after(t.latency_us, EventKind.UPLINK_DELIVERED, {'loop': loop.index})

    def _on_uplink_delivered(self, ev: SimEvent) -> None:
        if self.ended:
            return
        self._tool_notes = []
        self._loop.uplink_done_us = ev.time_us
        result = self._call('run_detection')
        if not result.ok:
            self._restart_loop(ev.time_us, f'run_detection {result.status.value}')

    def _on_inference_done(self, ev: SimEvent) -> None:
        if self.ended:
            return
        self.engine.complete()
        loop = self._loop
        loop.infer_us = ev.time_us - loop.uplink_done_us
        det = detection_check(loop.frame, self.scenario.confidence, self.scenario.tiers)
        loop.confidence = det.confidence
        self.memory.append(ev.time_us, MemoryKind.PERCEPTION_OUTCOME, {
            'loop': loop.index,
            'detected': det.detected,
            'confidence': det.confidence,
            'distance_m': loop.frame.distance_m,
            'in_fov': loop.frame.in_fov,
            'target_position': list(loop.frame.target_estimate),
        })
        self.kernel.note(confidence=round(det.confidence, 6), detected=det.detected)
        self.kernel.after(self.scenario.reasoning_us, EventKind.PLAN_STEP, {'loop': loop.index})

    def _on_plan_step(self, ev: SimEvent) -> None:
        if self.ended:
            return
        self._tool_notes = []
        loop = self._loop
        loop.plan_us = ev.time_us
        self._call('get_kpis')

        phase = self.plan.current.kind
        if self.plan.finished:
            # the final hover was lost on the downlink; send it again
            call = ToolCall('hover', {}, ev.time_us)
        else:
            call = next_action(self.plan, self.memory, self._last_kpis, self.policy, ev.time_us)
        if self.plan.current.kind is not phase:
            self.kernel.note(subtask=self.plan.current.kind.value)
            wanted = self.scenario.tier.for_phase(self.plan.current.kind)
            if wanted is not self.tier:
                self._call('set_uplink_resolution', {'tier': wanted.value})

        result = self._dispatch(call)
        if result.ok:
            loop.downlink_us = result.payload['latency_us']
        elif result.status is ToolStatus.DROPPED:
            self._restart_loop(ev.time_us + result.payload['latency_us'], 'downlink dropped')
        else:
            self._restart_loop(ev.time_us, f'{call.name} {result.status.value}')

    def _on_command_delivered(self, ev: SimEvent) -> None:
        if self.ended:
            return
        s = self.scenario
        self.drone.advance_to(ev.time_us)
        self.drone.apply(self._pending_command)
        self.kernel.note(drone=self.drone.state.to_dict())

        loop = self._loop
        self.loops.append(LoopTrace(
            loop=loop.index,
            start_us=loop.start_us,
            t_capture_us=s.world.frame_period_us,
            t_uplink_us=loop.uplink_us,
            t_infer_us=loop.infer_us,
            t_reason_us=s.reasoning_us,
            t_downlink_us=loop.downlink_us,
            confidence=loop.confidence,
            subtask=loop.subtask,
            tier=loop.tier,
            distance_m=loop.frame.distance_m,
        ))

        status = mission_status(s.world, self.drone.state, self.plan, ev.time_us, s.t_max_us)
        if status is MissionStatus.SUCCESS:
            self._end(Outcome.SUCCESS)
        elif status is MissionStatus.IN_PROGRESS:
            self._begin_loop(ev.time_us)

    def _on_mission_end(self, ev: SimEvent) -> None:
        if self.outcome is None:
            self.outcome = Outcome(ev.payload['outcome'])
        self.kernel.note(loops=len(self.loops), sim_time_us=ev.time_us)
        self.kernel.halt()

    # -- Driver ------------------------------------------------------------------

    def run(self) -> RunResult:
        s = self.scenario
        k = self.kernel
        k.at(0, EventKind.CONTAINER_START, {'owner': Owner.COMM.value})
        if self.inference_load:
            k.at(0, EventKind.CONTAINER_START, {'owner': Owner.INFERENCE.value})
        k.at(0, EventKind.SLOT_TICK)
        self._schedule_burst(currently_on=False)
        horizon = s.t_max_us + 1
        if self.inference_load:
            k.at(horizon, EventKind.MISSION_END, {'outcome': Outcome.TIMEOUT.value})

        log.info(f'Run {s.name!r}: {s.strategy.value}, tier {s.tier.label}, seed {s.seed}, '
                 f'inference {"on" if self.inference_load else "off"}')
        k.run_until(horizon)
        if self.outcome is None:
            self.outcome = Outcome.TIMEOUT if self.inference_load else Outcome.COMM_ONLY
        if self.engine is not None:
            self.engine.stop()

        summary = self._summarise()
        log.info(f'Run {s.name!r} finished: {summary.outcome.value} after {summary.loops} loops, '
                 f'{summary.sim_time_s:.3f}s simulated, mean loop {summary.mean_loop_latency_ms:.1f}ms')
        return RunResult(
            scenario=s,
            summary=summary,
            trace=k.trace,
            loops=list(self.loops),
            kpis=list(self.kpis),
            slot_durations_us=list(self.comm.history.durations),
            slot_times_us=list(self.comm.history.times),
            slot_missed=list(self.comm.history.missed),
        )

    def _summarise(self) -> RunSummary:
        s = self.scenario
        h = self.comm.history

        def mean_ms(values) -> float:
            return float(np.mean(values)) / 1000 if len(values) else 0.0

        totals = [lt.total_us for lt in self.loops]
        offered = math.fsum(h.offered_bits)
        dropped = math.fsum(h.dropped_bits)
        durations = np.asarray(h.durations, dtype=float)
        n = len(h)

        return RunSummary(
            scenario=s.name,
            strategy=s.strategy.value,
            tier=s.tier.label,
            seed=s.seed,
            outcome=self.outcome,
            loops=len(self.loops),
            mean_loop_latency_ms=mean_ms(totals),
            p95_loop_latency_ms=float(np.percentile(totals, 95)) / 1000 if totals else 0.0,
            mean_capture_ms=mean_ms([lt.t_capture_us for lt in self.loops]),
            mean_uplink_ms=mean_ms([lt.t_uplink_us for lt in self.loops]),
            mean_infer_ms=mean_ms([lt.t_infer_us for lt in self.loops]),
            mean_reason_ms=mean_ms([lt.t_reason_us for lt in self.loops]),
            mean_downlink_ms=mean_ms([lt.t_downlink_us for lt in self.loops]),
            loss_rate=dropped / offered if offered > 0 else 0.0,
            deadline_miss_rate=sum(h.missed) / n if n else 0.0,
            oom_events=self.engine.oom_events if self.engine is not None else 0,
            stream_mbps=offered / (n * h.slot_us) if n else 0.0,
            mean_confidence=float(np.mean([lt.confidence for lt in self.loops])) if self.loops else 0.0,
            transfer_loss_rate=self.comm.lost_attempts / self.comm.attempts if self.comm.attempts else 0.0,
            dropped_transfers=self.comm.dropped_transfers,
            slot_latency_mean_us=float(durations.mean()) if n else 0.0,
            slot_latency_std_us=float(durations.std()) if n else 0.0,
            slot_count=n,
            sim_time_s=self.kernel.now_us / 1e6,
            digest=self.kernel.trace.digest(),
        )


def run_scenario(scenario: Scenario, inference_load: bool = True) -> RunResult:
    return Sc3Run(scenario, inference_load).run()
