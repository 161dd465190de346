"""
Simulated physical environment: drone kinematics in a bounded indoor arena,
one target object, frame-capture geometry and mission termination.

Kinematics are first-order: the commanded velocity is applied directly after
clamping, and the drone state is integrated in fixed control sub-steps.
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum

from pipeline.inference import DEFAULT_TIERS, ConfidenceModel, ResolutionTier, TierProfile, confidence
from pipeline.utils import Vec3, clamp, norm, scale, sub, wrap_angle

log = logging.getLogger('SC3Sim.world')

_MIN_DISTANCE_M = 1e-6


@dataclass(frozen=True)
class DroneLimits:
    v_max: float = 1.5
    yaw_rate_max: float = 0.8

    def __post_init__(self):
        if self.v_max <= 0 or self.yaw_rate_max <= 0:
            raise ValueError('v_max and yaw_rate_max must be positive')


@dataclass(frozen=True)
class Target:
    label: str = 'chair'
    position: Vec3 = (10.0, 10.0, 1.0)


@dataclass(frozen=True)
class WorldModel:
    arena: Vec3 = (20.0, 20.0, 5.0)
    target: Target = field(default_factory=Target)
    frame_period_us: int = 33333
    spawn_position: Vec3 = (3.5, 10.0, 1.0)
    spawn_yaw: float = -math.pi / 2
    control_dt_us: int = 10000
    standoff_m: float = 0.5
    arrive_distance_m: float = 1.0
    limits: DroneLimits = field(default_factory=DroneLimits)

    def __post_init__(self):
        if not self.contains(self.target.position):
            raise ValueError(f'target {self.target.position} lies outside the arena {self.arena}')
        if not self.contains(self.spawn_position):
            raise ValueError(f'spawn {self.spawn_position} lies outside the arena {self.arena}')
        if self.frame_period_us <= 0 or self.control_dt_us <= 0:
            raise ValueError('frame_period_us and control_dt_us must be positive')
        if self.standoff_m < 0 or self.arrive_distance_m <= 0:
            raise ValueError('standoff_m must be non-negative and arrive_distance_m positive')

    def contains(self, p: Vec3) -> bool:
        return all(0.0 <= p[i] <= self.arena[i] for i in range(3))

    def clamp(self, p: Vec3) -> Vec3:
        return tuple(clamp(p[i], 0.0, self.arena[i]) for i in range(3))


@dataclass(frozen=True)
class DroneState:
    position: Vec3
    yaw: float = 0.0
    velocity: Vec3 = (0.0, 0.0, 0.0)
    yaw_rate: float = 0.0

    def to_dict(self) -> dict:
        return {
            'position': [round(c, 6) for c in self.position],
            'yaw': round(self.yaw, 6),
            'velocity': [round(c, 6) for c in self.velocity],
            'yaw_rate': round(self.yaw_rate, 6),
        }


class CommandMode(str, Enum):
    VELOCITY = 'velocity'
    GOTO = 'goto'


@dataclass(frozen=True)
class DroneCommand:
    mode: CommandMode = CommandMode.VELOCITY
    velocity: Vec3 = (0.0, 0.0, 0.0)
    yaw_rate: float = 0.0
    target: Vec3 | None = None
    speed: float = 1.0

    @classmethod
    def hover(cls) -> 'DroneCommand':
        return cls()

    def to_dict(self) -> dict:
        d = {'mode': self.mode.value, 'yaw_rate': self.yaw_rate}
        if self.mode is CommandMode.GOTO:
            d.update(target=list(self.target), speed=self.speed)
        else:
            d['velocity'] = list(self.velocity)
        return d


@dataclass(frozen=True)
class Frame:
    capture_us: int
    tier: ResolutionTier
    distance_m: float
    bearing_rad: float
    in_fov: bool
    offset: Vec3            # target minus drone position at capture
    drone_position: Vec3

    @property
    def target_estimate(self) -> Vec3:
        return tuple(self.drone_position[i] + self.offset[i] for i in range(3))


@dataclass(frozen=True)
class Detection:
    detected: bool
    confidence: float


class MissionStatus(str, Enum):
    IN_PROGRESS = 'InProgress'
    SUCCESS = 'Success'
    TIMEOUT = 'Timeout'


DEFAULT_WORLD = WorldModel()


# -- Operations ------------------------------------------------------------------

def _commanded_velocity(s: DroneState, cmd: DroneCommand, dt_s: float,
                        w: WorldModel) -> Vec3:
    if cmd.mode is CommandMode.GOTO and cmd.target is not None:
        offset = sub(cmd.target, s.position)
        dist = norm(offset)
        remaining = dist - w.standoff_m
        if remaining <= 0 or dist < _MIN_DISTANCE_M:
            return 0.0, 0.0, 0.0
        # never step past the stand-off sphere within one sub-step
        speed = min(cmd.speed, w.limits.v_max, remaining / dt_s)
        return scale(offset, speed / dist)

    v = cmd.velocity
    mag = norm(v)
    if mag > w.limits.v_max:
        v = scale(v, w.limits.v_max / mag)
    return v


def step_kinematics(s: DroneState, cmd: DroneCommand, dt_us: int,
                    w: WorldModel = DEFAULT_WORLD) -> DroneState:
    if dt_us <= 0:
        raise ValueError('dt_us must be positive')
    dt_s = dt_us / 1e6
    v = _commanded_velocity(s, cmd, dt_s, w)
    yaw_rate = clamp(cmd.yaw_rate, -w.limits.yaw_rate_max, w.limits.yaw_rate_max)
    pos = w.clamp(tuple(s.position[i] + v[i] * dt_s for i in range(3)))
    return DroneState(pos, wrap_angle(s.yaw + yaw_rate * dt_s), v, yaw_rate)


def capture_frame(w: WorldModel, s: DroneState, tier: ResolutionTier, now_us: int = 0,
                  fov_deg: float = 60.0) -> Frame:
    offset = sub(w.target.position, s.position)
    distance = max(norm(offset), _MIN_DISTANCE_M)
    bearing = wrap_angle(math.atan2(offset[1], offset[0]) - s.yaw)
    in_fov = abs(bearing) <= math.radians(fov_deg / 2)
    return Frame(now_us, tier, distance, bearing, in_fov, offset, s.position)


def detection_check(f: Frame, cm: ConfidenceModel,
                    tiers: dict[ResolutionTier, TierProfile] = DEFAULT_TIERS) -> Detection:
    c = confidence(f.tier, f.distance_m, cm, tiers)
    detected = f.in_fov and f.distance_m <= cm.max_detect_m and c >= cm.detect_threshold
    return Detection(detected, c)


def mission_status(w: WorldModel, s: DroneState, plan, t_us: int, t_max_us: int) -> MissionStatus:
    distance = norm(sub(w.target.position, s.position))
    if plan is not None and plan.finished and distance <= w.arrive_distance_m:
        return MissionStatus.SUCCESS
    if t_us > t_max_us:
        return MissionStatus.TIMEOUT
    return MissionStatus.IN_PROGRESS


class Drone:
    """Drone state integrated lazily up to the time of each event."""

    def __init__(self, world: WorldModel):
        self.world = world
        self.state = DroneState(world.spawn_position, world.spawn_yaw)
        self.command = DroneCommand.hover()
        self.t_us = 0

    def advance_to(self, t_us: int) -> DroneState:
        while self.t_us < t_us:
            dt = min(self.world.control_dt_us, t_us - self.t_us)
            self.state = step_kinematics(self.state, self.command, dt, self.world)
            self.t_us += dt
        return self.state

    def apply(self, cmd: DroneCommand) -> None:
        self.command = cmd
        log.debug(f'Drone command at t={self.t_us}us: {cmd.to_dict()}')

    def distance_to_target(self) -> float:
        return norm(sub(self.world.target.position, self.state.position))
