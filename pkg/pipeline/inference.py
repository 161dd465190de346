"""
Multimodal inference container: memory footprint, resolution-dependent run
time and the bitrate -> confidence law used as the perception-quality proxy.

Weights are allocated once at container start; each job allocates its
activation memory at submit and releases it at completion.
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum

from pipeline.kernel import EventKind, Kernel, SimEvent
from pipeline.partition import Oom, Owner, Partition, allocate, release

log = logging.getLogger('SC3Sim.inference')


class ResolutionTier(str, Enum):
    LOW = 'Low'
    MID = 'Mid'
    HIGH = 'High'


@dataclass(frozen=True)
class TierProfile:
    width: int
    height: int
    still_frame_kb: float
    stream_mbps: float
    inf_base_ms: float      # at reference_fraction

    @property
    def frame_bytes(self) -> int:
        return int(round(self.still_frame_kb * 1000))


DEFAULT_TIERS: dict[ResolutionTier, TierProfile] = {
    ResolutionTier.LOW:  TierProfile(640, 480, 100.0, 0.9, 380.0),
    ResolutionTier.MID:  TierProfile(1280, 720, 400.0, 4.5, 480.0),
    ResolutionTier.HIGH: TierProfile(1920, 1080, 900.0, 12.0, 550.0),
}

REFERENCE_FRACTION = 0.4


def _default_activation() -> dict[ResolutionTier, int]:
    return {ResolutionTier.LOW: 512, ResolutionTier.MID: 1024, ResolutionTier.HIGH: 2048}


@dataclass(frozen=True)
class ModelProfile:
    weights_mib: int = 35840
    activation_mib: dict[ResolutionTier, int] = field(default_factory=_default_activation)


@dataclass(frozen=True)
class ConfidenceModel:
    c_min: float = 0.35
    c_max: float = 0.95
    b0_mbps: float = 3.0
    detect_threshold: float = 0.6
    d0_m: float = 5.0
    max_detect_m: float = 12.0
    fov_deg: float = 60.0

    def __post_init__(self):
        if not 0 <= self.c_min < self.detect_threshold < self.c_max <= 1:
            raise ValueError('confidence bounds must satisfy 0 <= c_min < threshold < c_max <= 1')
        if self.b0_mbps <= 0 or self.d0_m <= 0:
            raise ValueError('b0_mbps and d0_m must be positive')


@dataclass(frozen=True)
class InferenceJob:
    frame: object
    tier: ResolutionTier
    submit_us: int
    partition_id: str
    loop: int = 0


class Busy(Exception):
    pass


class NotResident(Exception):
    pass


# -- Laws ------------------------------------------------------------------------

def inference_memory_footprint(m: ModelProfile, tier: ResolutionTier) -> int:
    return m.weights_mib + m.activation_mib[tier]


def container_start(m: ModelProfile, p: Partition) -> Partition:
    """Make the weights resident on `p`; raises Oom when they do not fit."""
    if p.owner is not Owner.INFERENCE:
        raise ValueError(f'inference container needs an inference partition, not {p.owner.value}')
    return allocate(p, m.weights_mib)


def inference_duration_us(
    tier: ResolutionTier,
    compute_fraction: float,
    tiers: dict[ResolutionTier, TierProfile] = DEFAULT_TIERS,
) -> int:
    if not 0 < compute_fraction <= 1:
        raise ValueError('compute_fraction must lie in (0, 1]')
    ms = tiers[tier].inf_base_ms * (REFERENCE_FRACTION / compute_fraction)
    return int(round(ms * 1000))


def bitrate_confidence(bitrate_mbps: float, cm: ConfidenceModel) -> float:
    """Saturating confidence in the stream bitrate, before the range penalty."""
    return cm.c_min + (cm.c_max - cm.c_min) * (1.0 - math.exp(-bitrate_mbps / cm.b0_mbps))


def confidence(
    tier: ResolutionTier,
    distance_m: float,
    cm: ConfidenceModel,
    tiers: dict[ResolutionTier, TierProfile] = DEFAULT_TIERS,
) -> float:
    if distance_m <= 0:
        raise ValueError('distance must be positive')
    c = bitrate_confidence(tiers[tier].stream_mbps, cm)
    return c * min(1.0, cm.d0_m / distance_m)


# -- Engine ----------------------------------------------------------------------

class InferenceEngine:
    """The inference container of one run; at most one job in flight."""

    def __init__(self, model: ModelProfile, partition: Partition,
                 tiers: dict[ResolutionTier, TierProfile] = DEFAULT_TIERS):
        self.model = model
        self.partition = partition
        self.tiers = tiers
        self.resident = False
        self.job: InferenceJob | None = None
        self.oom_events = 0

    @property
    def busy(self) -> bool:
        return self.job is not None

    def start(self) -> None:
        try:
            self.partition = container_start(self.model, self.partition)
        except Oom:
            self.oom_events += 1
            raise
        self.resident = True
        log.debug(f'Inference weights resident on {self.partition.id}: '
                  f'{self.partition.memory_used_mib}/{self.partition.memory_capacity_mib} MiB')

    def stop(self) -> None:
        if self.job is not None:
            self.complete()
        if self.resident:
            self.partition = release(self.partition, self.model.weights_mib)
            self.resident = False

    def submit(self, job: InferenceJob, kernel: Kernel) -> SimEvent:
        """Allocate activations and schedule the InferenceDone event."""
        if not self.resident:
            raise NotResident('inference container is not running')
        if self.job is not None:
            raise Busy(f'job for loop {self.job.loop} still in flight')
        try:
            self.partition = allocate(self.partition, self.model.activation_mib[job.tier])
        except Oom:
            self.oom_events += 1
            raise
        self.job = job
        duration = inference_duration_us(job.tier, self.partition.compute_fraction, self.tiers)
        return kernel.after(duration, EventKind.INFERENCE_DONE,
                            {'loop': job.loop, 'tier': job.tier.value})

    def complete(self) -> InferenceJob:
        job = self.job
        if job is None:
            raise RuntimeError('no inference job in flight')
        self.partition = release(self.partition, self.model.activation_mib[job.tier])
        self.job = None
        return job


def submit_inference(job: InferenceJob, engine: InferenceEngine, kernel: Kernel) -> SimEvent:
    return engine.submit(job, kernel)
