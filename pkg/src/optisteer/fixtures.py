"""Canonical desk-scale fixture: a vertical-mill style plant.

One control tag (feed) raises the optimize tag (output, good) but also raises
vibration (survival threshold 0.45) and pressure (upper bound 5050), so the
optimizer, safeguard, and survival layers are all in play. Dynamics are
linear first-order, so every expected value in the tests is hand-computable
and the regression model can recover the generating coefficients exactly.
"""

from __future__ import annotations

import numpy as np

from .ace import AceConfig, parse_ace_dict
from .checks import Sample
from .plant import Plant, plant_from_dict


def mill_ace_dict(window_size: int = 4, prediction_length: int = 1) -> dict:
    return {
        "sample_period_ms": 1000,
        "window_size": window_size,
        "prediction_length": prediction_length,
        "broken_fraction_limit": 0.25,
        "outlier_fence_k": 1.5,
        "outlier_alert_fraction": 0.05,
        "tags": [
            {
                "name": "feed",
                "kind": "control",
                "unit": "t/h",
                "static_bounds": [30.0, 80.0],
                "max_step": 2.0,
            },
            {
                "name": "vibration",
                "kind": "constraint",
                "unit": "mm/s",
                "static_bounds": [0.0, 0.45],
                "broken_sensor_bounds": [-1.0, 2.0],
                "survival_threshold": 0.45,
            },
            {
                "name": "pressure",
                "kind": "constraint",
                "unit": "mbar",
                "static_bounds": [3000.0, 5050.0],
                "broken_sensor_bounds": [2000.0, 7000.0],
            },
            {
                "name": "output",
                "kind": "optimize",
                "unit": "t/h",
                "weight": 1.0,
                "target": 110.0,
                "broken_sensor_bounds": [0.0, 500.0],
            },
        ],
        "relations": [
            {"cause": "feed", "effect": "vibration", "sign": "positive"},
            {"cause": "feed", "effect": "pressure", "sign": "positive"},
            {"cause": "feed", "effect": "output", "sign": "positive"},
        ],
    }


def mill_ace(window_size: int = 4, prediction_length: int = 1) -> AceConfig:
    return parse_ace_dict(mill_ace_dict(window_size, prediction_length))


# Steady states for constant feed f:
#   vibration* = 0.0064 f      (0.45 crossed near f = 70.3)
#   pressure*  = 12 f + 4350   (5050 crossed near f = 58.3)
#   output*    = 2 f           (target 110 reached at f = 55)
MILL_GENERATING_COEFFICIENTS = {
    "vibration": {"vibration": 0.5, "feed": 0.0032, "intercept": 0.0},
    "pressure": {"pressure": 0.8, "feed": 2.4, "intercept": 870.0},
    "output": {"output": 0.9, "feed": 0.2, "intercept": 0.0},
}


def mill_plant_dict(
    noise: dict[str, float] | None = None, start_ms: int = 0
) -> dict:
    return {
        "start_ms": start_ms,
        "initial": {
            "feed": 50.0,
            "vibration": 0.32,
            "pressure": 4950.0,
            "output": 100.0,
        },
        "controls": {"feed": 50.0},
        "dynamics": {
            "coefficients": [
                {"cause": "feed", "effect": "vibration", "gain": 0.0032},
                {"cause": "feed", "effect": "pressure", "gain": 2.4},
                {"cause": "feed", "effect": "output", "gain": 0.2},
            ],
            "decay": {"vibration": 0.5, "pressure": 0.8, "output": 0.9},
            "baseline": {"vibration": 0.0, "pressure": 870.0, "output": 0.0},
            "noise_sigma": dict(noise or {}),
        },
        "rates": {
            "feed": 1000,
            "vibration": 1000,
            "pressure": 1000,
            "output": 1000,
        },
    }


def mill_plant(
    config: AceConfig,
    seed: int = 0,
    noise: dict[str, float] | None = None,
    start_ms: int = 0,
) -> Plant:
    return plant_from_dict(mill_plant_dict(noise=noise, start_ms=start_ms), config, seed=seed)


def excitation_walk(plant: Plant, steps: int, seed: int) -> list[Sample]:
    """Open-loop training excitation: a random walk on each control tag inside
    its dynamic bounds, so the regression sees persistently excited data."""
    rng = np.random.default_rng(seed)
    config = plant.config
    samples: list[Sample] = []
    controls = dict(plant.state.controls)
    for _ in range(steps):
        for tag in config.control_tags:
            spec = config.tags[tag]
            lo, hi = spec.static_bounds if spec.static_bounds else (-np.inf, np.inf)
            step_v = rng.uniform(-spec.max_step, spec.max_step)
            controls[tag] = float(min(max(controls[tag] + step_v, lo), hi))
        samples.extend(plant.advance(dict(controls)))
    return samples
