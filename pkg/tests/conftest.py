from __future__ import annotations

import pytest

from optisteer import fixtures
from optisteer.checks import fit_outlier_model
from optisteer.harness import frames_from_samples
from optisteer.predictor import build_dataset, train

TRAIN_STEPS = 4000
TRAIN_SEED = 7


@pytest.fixture(scope="session")
def mill_config():
    return fixtures.mill_ace()


@pytest.fixture(scope="session")
def mill_training(mill_config):
    """Open-loop excitation capture shared by the suite: samples, frames,
    fitted outlier fences, and the trained model."""
    plant = fixtures.mill_plant(mill_config, seed=0)
    samples = fixtures.excitation_walk(plant, TRAIN_STEPS, seed=TRAIN_SEED)
    by_tag: dict[str, list[float]] = {}
    for s in samples:
        by_tag.setdefault(s.tag, []).append(s.value)
    outliers = fit_outlier_model(by_tag, mill_config.outlier_fence_k)
    frames = frames_from_samples(samples, mill_config)
    model = train(build_dataset(frames, mill_config))
    return {
        "samples": samples,
        "by_tag": by_tag,
        "frames": frames,
        "outliers": outliers,
        "model": model,
    }


@pytest.fixture(scope="session")
def mill_model(mill_training):
    return mill_training["model"]


@pytest.fixture(scope="session")
def mill_outliers(mill_training):
    return mill_training["outliers"]


@pytest.fixture(scope="session")
def eval_start_ms(mill_config, mill_model):
    return mill_model.training_span[1] + mill_config.sample_period_ms


def fresh_mill(config, seed, noise=None, start_ms=0):
    return fixtures.mill_plant(config, seed=seed, noise=noise, start_ms=start_ms)
