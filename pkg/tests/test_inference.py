import math

import pytest

from pipeline.inference import (
    Busy, ConfidenceModel, InferenceEngine, InferenceJob, ModelProfile, NotResident, ResolutionTier,
    confidence, container_start, inference_duration_us, inference_memory_footprint, submit_inference,
)
from pipeline.kernel import EventKind, Kernel
from pipeline.partition import Oom, Owner, Partition, release

CM = ConfidenceModel()
MODEL = ModelProfile()
LOW, MID, HIGH = ResolutionTier.LOW, ResolutionTier.MID, ResolutionTier.HIGH


def _inference_partition(capacity=40960):
    return Partition('gi1-inference', Owner.INFERENCE, 0.4, capacity)


def test_memory_footprint():
    assert inference_memory_footprint(MODEL, HIGH) == 37888
    assert inference_memory_footprint(MODEL, LOW) == 36352
    for tier in ResolutionTier:
        assert inference_memory_footprint(MODEL, tier) > 20480


def test_container_start_on_full_size_partition():
    assert container_start(MODEL, _inference_partition()).memory_used_mib == 35840


def test_container_start_on_quarter_partition_is_oom():
    with pytest.raises(Oom):
        container_start(MODEL, _inference_partition(20480))


def test_container_restart_after_release():
    p = container_start(MODEL, _inference_partition())
    p = release(p, MODEL.weights_mib)
    assert container_start(MODEL, p).memory_used_mib == 35840


@pytest.mark.parametrize('tier, fraction, expected_us', [
    (HIGH, 0.4, 550_000),
    (HIGH, 0.8, 275_000),
    (MID, 0.4, 480_000),
    (LOW, 0.4, 380_000),
])
def test_inference_duration(tier, fraction, expected_us):
    assert inference_duration_us(tier, fraction) == expected_us


def test_duration_decreases_with_compute():
    assert inference_duration_us(MID, 0.2) > inference_duration_us(MID, 0.5)


def test_duration_rejects_bad_fraction():
    with pytest.raises(ValueError):
        inference_duration_us(HIGH, 0.0)


def test_confidence_values_within_five_metres():
    assert confidence(HIGH, 5.0, CM) == pytest.approx(0.9390106, abs=1e-6)
    assert confidence(MID, 3.0, CM) == pytest.approx(0.8161219, abs=1e-6)
    assert confidence(LOW, 1.0, CM) == pytest.approx(0.5055091, abs=1e-6)


def test_confidence_matches_closed_form():
    b = 12.0
    expected = (0.35 + 0.6 * (1 - math.exp(-b / 3.0))) * (5.0 / 8.0)
    assert confidence(HIGH, 8.0, CM) == pytest.approx(expected, abs=1e-12)


def test_confidence_ordering_and_range_penalty():
    for d in (1.0, 5.0, 7.5, 11.0):
        assert confidence(HIGH, d, CM) > confidence(MID, d, CM) > confidence(LOW, d, CM)
    assert confidence(HIGH, 10.0, CM) < confidence(HIGH, 6.0, CM) < confidence(HIGH, 5.0, CM)


def test_confidence_model_rejects_threshold_outside_bounds():
    with pytest.raises(ValueError):
        ConfidenceModel(detect_threshold=0.99)


def _engine():
    engine = InferenceEngine(MODEL, _inference_partition())
    engine.start()
    return engine


def test_submit_schedules_completion_and_releases_activation():
    kernel = Kernel(seed=0)
    engine = _engine()
    before = engine.partition.memory_used_mib

    ev = submit_inference(InferenceJob(None, HIGH, 0, engine.partition.id, loop=1), engine, kernel)
    assert ev.kind is EventKind.INFERENCE_DONE
    assert ev.time_us == 550_000
    assert engine.partition.memory_used_mib == 37888

    engine.complete()
    assert engine.partition.memory_used_mib == before
    assert not engine.busy


def test_second_submit_is_busy():
    kernel = Kernel(seed=0)
    engine = _engine()
    engine.submit(InferenceJob(None, LOW, 0, engine.partition.id), kernel)
    with pytest.raises(Busy):
        engine.submit(InferenceJob(None, LOW, 0, engine.partition.id), kernel)


def test_submit_before_start_is_rejected():
    engine = InferenceEngine(MODEL, _inference_partition())
    with pytest.raises(NotResident):
        engine.submit(InferenceJob(None, LOW, 0, engine.partition.id), Kernel(seed=0))


def test_activation_oom_is_counted():
    engine = InferenceEngine(ModelProfile(weights_mib=40000), _inference_partition())
    engine.start()
    with pytest.raises(Oom):
        engine.submit(InferenceJob(None, HIGH, 0, engine.partition.id), Kernel(seed=0))
    assert engine.oom_events == 1
    assert not engine.busy
