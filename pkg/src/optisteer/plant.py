"""Synthetic ground-truth plant with linear first-order dynamics.

Stands in for the production line the pipeline cannot touch: steps a
noise-free-or-noisy physical state forward, emits multi-rate sensor
samples, and injects scripted faults (spikes, broken sensors, mean
drift, dropouts) so every downstream detector has a known signature
to find.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .ace import AceConfig, RelationSign, TagKind
from .checks import Sample
from .errors import ConfigSchemaError, UnknownTagError


@dataclass(frozen=True)
class PlantState:
    time_ms: int
    values: dict[str, float]
    controls: dict[str, float]


@dataclass(frozen=True)
class PlantDynamics:
    """Linear first-order update: v' = decay*v + sum(gain*cause) + baseline + noise."""

    coefficients: dict[tuple[str, str], float]
    decay: dict[str, float]
    noise_sigma: dict[str, float]
    baseline: dict[str, float]

    def gains_into(self, effect: str) -> list[tuple[str, float]]:
        return [(cause, g) for (cause, eff), g in self.coefficients.items() if eff == effect]

    def check_relation_signs(self, config: AceConfig) -> None:
        """Declared relation signs must agree with the physical gains."""
        for rel in config.relations:
            gain = self.coefficients.get((rel.cause, rel.effect))
            if gain is None:
                continue
            expected = RelationSign.POSITIVE if gain > 0 else RelationSign.NEGATIVE
            if expected is not rel.sign:
                raise ConfigSchemaError(
                    f"gain for {rel.cause}->{rel.effect} is {gain}, "
                    f"contradicting the declared {rel.sign.value} relation"
                )


class FaultKind(str, Enum):
    SPIKE_OUTLIER = "spike_outlier"
    BROKEN_SENSOR = "broken_sensor"
    MEAN_DRIFT = "mean_drift"
    DROPOUT = "dropout"


@dataclass(frozen=True)
class FaultEvent:
    tag: str
    start_ms: int
    end_ms: int
    kind: FaultKind
    magnitude: float = 0.0

    def active_at(self, t_ms: int) -> bool:
        return self.start_ms <= t_ms < self.end_ms


@dataclass(frozen=True)
class FaultScript:
    events: tuple[FaultEvent, ...] = ()

    def validate(self, declared_tags: set[str]) -> None:
        for ev in self.events:
            if ev.start_ms >= ev.end_ms:
                raise ConfigSchemaError(f"fault on {ev.tag!r}: start must precede end")
            if ev.tag not in declared_tags:
                raise UnknownTagError(f"fault references undeclared tag {ev.tag!r}")


def step(
    state: PlantState,
    dynamics: PlantDynamics,
    applied_controls: dict[str, float],
    config: AceConfig,
    rng: np.random.Generator,
) -> PlantState:
    """Advance the true state one sample period.

    The response update reads the current state's values, so the set points
    already in force drive this transition; the newly applied controls land
    in the next state (one step of actuation delay) and drive the following
    one. That keeps the next state an exact function of the current
    observable state, which is what makes the regression identifiable.
    Deterministic for a given generator state.
    """
    for name in applied_controls:
        if name not in config.tags or config.tags[name].kind is not TagKind.CONTROL:
            raise UnknownTagError(f"applied control {name!r} is not a declared control tag")
    controls = dict(state.controls)
    controls.update(applied_controls)

    new_values: dict[str, float] = {}
    for name, spec in config.tags.items():
        if spec.kind is TagKind.CONTROL:
            new_values[name] = controls.get(name, state.values[name])
            continue
        v = dynamics.decay.get(name, 1.0) * state.values[name]
        for cause, gain in dynamics.gains_into(name):
            if cause not in state.values:
                raise UnknownTagError(f"dynamics gain references undeclared tag {cause!r}")
            v += gain * state.values[cause]
        v += dynamics.baseline.get(name, 0.0)
        sigma = dynamics.noise_sigma.get(name, 0.0)
        if sigma > 0.0:
            v += rng.normal(0.0, sigma)
        new_values[name] = v
    return PlantState(
        time_ms=state.time_ms + config.sample_period_ms,
        values=new_values,
        controls=controls,
    )


def _first_emission_at_or_after(start_ms: int, period_ms: int) -> int:
    return int(math.ceil(start_ms / period_ms)) * period_ms


def emit(
    state: PlantState,
    fault_script: FaultScript,
    rates: dict[str, int],
    config: AceConfig,
) -> list[Sample]:
    """Sensor readings due at the state's timestamp, faults applied.

    Each tag emits on its own period. A spike adds its magnitude on the
    first emission inside the fault interval only; a broken sensor emits a
    value offset past the broken bound (positive magnitude above hi,
    negative below lo); mean drift adds its magnitude for the whole
    interval; a dropout suppresses emission entirely.
    """
    samples: list[Sample] = []
    t = state.time_ms
    for tag, period in rates.items():
        if period <= 0:
            raise ConfigSchemaError(f"sampling period for {tag!r} must be positive")
        if t % period != 0:
            continue
        value = state.values[tag]
        suppressed = False
        for ev in fault_script.events:
            if ev.tag != tag or not ev.active_at(t):
                continue
            if ev.kind is FaultKind.DROPOUT:
                suppressed = True
            elif ev.kind is FaultKind.MEAN_DRIFT:
                value += ev.magnitude
            elif ev.kind is FaultKind.SPIKE_OUTLIER:
                if t == _first_emission_at_or_after(ev.start_ms, period):
                    value += ev.magnitude
            elif ev.kind is FaultKind.BROKEN_SENSOR:
                bounds = config.tags[tag].broken_sensor_bounds
                if bounds is None:
                    raise ConfigSchemaError(
                        f"broken_sensor fault on {tag!r} needs broken_sensor_bounds"
                    )
                lo, hi = bounds
                value = hi + ev.magnitude if ev.magnitude >= 0 else lo + ev.magnitude
        if not suppressed:
            samples.append(Sample(timestamp_ms=t, tag=tag, value=value))
    return samples


@dataclass
class Plant:
    """Convenience wrapper tying state, dynamics, and sampling rates together."""

    config: AceConfig
    dynamics: PlantDynamics
    state: PlantState
    rates: dict[str, int]
    script: FaultScript = field(default_factory=FaultScript)
    rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0))

    def seed(self, seed: int) -> None:
        self.rng = np.random.default_rng(seed)

    def advance(self, applied_controls: dict[str, float]) -> list[Sample]:
        """Step once and return the samples due at the new timestamp."""
        self.state = step(self.state, self.dynamics, applied_controls, self.config, self.rng)
        return emit(self.state, self.script, self.rates, self.config)


# --- JSON documents (schemas mirror the dataclasses) ---

def dynamics_from_dict(doc: dict) -> PlantDynamics:
    coeffs = {
        (str(e["cause"]), str(e["effect"])): float(e["gain"])
        for e in doc.get("coefficients", [])
    }
    return PlantDynamics(
        coefficients=coeffs,
        decay={k: float(v) for k, v in doc.get("decay", {}).items()},
        noise_sigma={k: float(v) for k, v in doc.get("noise_sigma", {}).items()},
        baseline={k: float(v) for k, v in doc.get("baseline", {}).items()},
    )


def plant_from_dict(doc: dict, config: AceConfig, seed: int = 0) -> Plant:
    dynamics = dynamics_from_dict(doc["dynamics"])
    dynamics.check_relation_signs(config)
    for name, decay in dynamics.decay.items():
        if not 0.0 < decay <= 1.0:
            raise ConfigSchemaError(f"decay for {name!r} must lie in (0, 1], got {decay}")
    initial = {k: float(v) for k, v in doc["initial"].items()}
    controls = {k: float(v) for k, v in doc.get("controls", {}).items()}
    missing = set(config.tags) - set(initial)
    if missing:
        raise ConfigSchemaError(f"plant initial state missing tags {sorted(missing)}")
    state = PlantState(time_ms=int(doc.get("start_ms", 0)), values=initial, controls=controls)
    rates = {k: int(v) for k, v in doc.get("rates", {}).items()}
    for tag in config.tags:
        rates.setdefault(tag, config.sample_period_ms)
    plant = Plant(config=config, dynamics=dynamics, state=state, rates=rates)
    plant.seed(seed)
    return plant


def script_from_dict(doc: dict, config: AceConfig) -> FaultScript:
    events = tuple(
        FaultEvent(
            tag=str(e["tag"]),
            start_ms=int(e["start_ms"]),
            end_ms=int(e["end_ms"]),
            kind=FaultKind(e["kind"]),
            magnitude=float(e.get("magnitude", 0.0)),
        )
        for e in doc.get("events", [])
    )
    script = FaultScript(events=events)
    script.validate(set(config.tags))
    return script


def load_plant(path: str, config: AceConfig, seed: int = 0) -> Plant:
    with open(path, encoding="utf-8") as fh:
        return plant_from_dict(json.load(fh), config, seed=seed)


def load_script(path: str, config: AceConfig) -> FaultScript:
    with open(path, encoding="utf-8") as fh:
        return script_from_dict(json.load(fh), config)

