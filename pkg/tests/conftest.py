import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from boxrerank import synth
from boxrerank.oracle import LinearScorer
from boxrerank.rerank import PipelineConfig, run_pipeline


@pytest.fixture(scope="session")
def default_scenario():
    """The stock 1000 TP / 500 FP scenario, seed 42."""
    spec = synth.default_scenario()
    train, val, truth, labels = synth.generate(spec)
    return spec, train, val, truth, labels


@pytest.fixture(scope="session")
def default_run(default_scenario):
    """A finished pipeline run on the stock scenario with paper-default flags."""
    _, train, val, _, _ = default_scenario
    cfg = PipelineConfig(rng_seed=42)
    state = run_pipeline(train, val, LinearScorer(42), cfg)
    return cfg, state
