import json
from dataclasses import replace

import numpy as np
import pytest

from pipeline.inference import ResolutionTier
from pipeline.partition import Strategy
from pipeline.scenario import default_scenario


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def scenario():
    """Calibrated defaults: Proposed layout, High tier, seed 42."""
    return default_scenario(seed=42)


@pytest.fixture
def make_scenario():
    def _make(tier=ResolutionTier.HIGH, strategy=Strategy.PROPOSED, seed=42, **overrides):
        s = default_scenario(seed=seed, tier=tier, strategy=strategy)
        return replace(s, **overrides) if overrides else s
    return _make


@pytest.fixture
def write_scenario(tmp_path):
    """Write a scenario dict to a JSON file and return its path."""
    def _write(data, name='scenario.json'):
        path = tmp_path / name
        path.write_text(json.dumps(data), encoding='utf-8')
        return str(path)
    return _write
