from __future__ import annotations

import pytest

from optisteer import fixtures
from optisteer.ace import parse_ace_dict
from optisteer.bus import Bus
from optisteer.checks import Frame, Provenance, StreamChecker, Window, route
from optisteer.errors import ModeMismatchError
from optisteer.loop import SteeringLoop
from optisteer.optimizer import ControlMode, Prescription
from optisteer.plant import FaultEvent, FaultKind, FaultScript
from optisteer.safeguard import ModeDecision, arbitrate, decide, safeguard_prescription


def mill_window(mill_config, overrides=None, unstable=()):
    values = {"feed": 50.0, "vibration": 0.32, "pressure": 4950.0, "output": 100.0}
    values.update(overrides or {})
    frames = tuple(
        Frame(t, dict(values), {k: Provenance.MEASURED for k in values})
        for t in range(0, 4000, 1000)
    )
    stability = {t: t not in set(unstable) for t in values}
    return Window(frames, stability, {})


def decide_on(mill_config, overrides=None, unstable=()):
    window = mill_window(mill_config, overrides, unstable)
    return window, decide(window, route(window, mill_config), mill_config)


# --- decide ---

def test_survival_above_threshold(mill_config):
    _, decision = decide_on(mill_config, {"vibration": 0.50})
    assert decision.mode is ControlMode.SURVIVAL
    assert decision.triggering_tags == ("vibration",)


def test_ai_below_threshold(mill_config):
    _, decision = decide_on(mill_config, {"vibration": 0.40})
    assert decision.mode is ControlMode.AI
    assert decision.triggering_tags == ()


def test_threshold_is_strictly_greater(mill_config):
    # 0.45 exactly: not survival (and not out of bounds either, hi = 0.45)
    _, decision = decide_on(mill_config, {"vibration": 0.45})
    assert decision.mode is ControlMode.AI


def test_safeguard_on_pressure_bound(mill_config):
    _, decision = decide_on(mill_config, {"vibration": 0.40, "pressure": 5100.0})
    assert decision.mode is ControlMode.SAFEGUARD
    assert decision.triggering_tags == ("pressure",)


def test_survival_outranks_safeguard(mill_config):
    _, decision = decide_on(mill_config, {"vibration": 0.50, "pressure": 5100.0})
    assert decision.mode is ControlMode.SURVIVAL


def test_exactly_one_mode_for_any_window(mill_config):
    for overrides in ({}, {"vibration": 0.5}, {"pressure": 5100.0}, {"vibration": 0.5, "pressure": 5100.0}):
        _, decision = decide_on(mill_config, overrides)
        assert decision.mode in (ControlMode.AI, ControlMode.SAFEGUARD, ControlMode.SURVIVAL)
        assert (decision.mode is ControlMode.AI) == (decision.triggering_tags == ())


# --- safeguard_prescription ---

def test_survival_pins_feed_at_dynamic_lower_bound(mill_config):
    window, decision = decide_on(mill_config, {"vibration": 0.50})
    rx, alerts = safeguard_prescription(window, decision, mill_config)
    assert rx.mode is ControlMode.SURVIVAL
    assert rx.controls["feed"] == 48.0  # max(50 - 2, static lo 30)
    assert alerts == []


def test_safeguard_moves_one_step_down(mill_config):
    window, decision = decide_on(mill_config, {"pressure": 5100.0})
    rx, alerts = safeguard_prescription(window, decision, mill_config)
    assert rx.mode is ControlMode.SAFEGUARD
    assert rx.controls["feed"] == 48.0
    assert alerts == []


def test_below_lower_bound_moves_opposite(mill_config):
    window, decision = decide_on(mill_config, {"pressure": 2500.0})
    rx, _ = safeguard_prescription(window, decision, mill_config)
    assert rx.mode is ControlMode.SAFEGUARD
    assert rx.controls["feed"] == 52.0  # positive relation, below_lo -> increase


def test_negative_relation_pins_at_upper_bound():
    config = parse_ace_dict(
        {
            "sample_period_ms": 1000,
            "window_size": 1,
            "prediction_length": 1,
            "tags": [
                {"name": "cool", "kind": "control", "unit": "", "static_bounds": [0, 100], "max_step": 5.0},
                {
                    "name": "temp",
                    "kind": "constraint",
                    "unit": "",
                    "static_bounds": [0, 90],
                    "survival_threshold": 90.0,
                },
            ],
            "relations": [{"cause": "cool", "effect": "temp", "sign": "negative"}],
        }
    )
    values = {"cool": 40.0, "temp": 95.0}
    frame = Frame(0, values, {t: Provenance.MEASURED for t in values})
    window = Window((frame,), {t: True for t in values}, {})
    decision = decide(window, route(window, config), config)
    assert decision.mode is ControlMode.SURVIVAL
    rx, _ = safeguard_prescription(window, decision, config)
    assert rx.controls["cool"] == 45.0  # dynamic upper bound alleviates


def test_no_relation_holds_and_alerts():
    config = parse_ace_dict(
        {
            "sample_period_ms": 1000,
            "window_size": 1,
            "prediction_length": 1,
            "tags": [
                {"name": "feed", "kind": "control", "unit": "", "static_bounds": [30, 80], "max_step": 2.0},
                {"name": "orphan", "kind": "constraint", "unit": "", "static_bounds": [0, 10]},
            ],
            "relations": [],
        }
    )
    values = {"feed": 50.0, "orphan": 12.0}
    frame = Frame(0, values, {t: Provenance.MEASURED for t in values})
    window = Window((frame,), {t: True for t in values}, {})
    decision = decide(window, route(window, config), config)
    rx, alerts = safeguard_prescription(window, decision, config)
    assert rx.controls["feed"] == 50.0
    assert len(alerts) == 1 and alerts[0]["kind"] == "no_relation"


def test_unstable_only_trigger_holds_controls(mill_config):
    window = mill_window(mill_config, unstable={"output"})
    decision = decide(window, route(window, mill_config), mill_config)
    assert decision.mode is ControlMode.SAFEGUARD
    rx, alerts = safeguard_prescription(window, decision, mill_config)
    assert rx.controls["feed"] == 50.0
    assert alerts == []


def test_survival_never_outside_static_bounds(mill_config):
    window, decision = decide_on(mill_config, {"vibration": 0.50, "feed": 31.0})
    rx, _ = safeguard_prescription(window, decision, mill_config)
    assert rx.controls["feed"] == 30.0  # clipped at the static floor


# --- arbitrate ---

def _rx(mode, controls=None):
    return Prescription(
        id="rx-1",
        timestamp_ms=0,
        mode=mode,
        controls=controls or {"feed": 50.0},
        predicted={},
        objective_value=None,
        rationale="",
    )


def test_arbitrate_returns_ai_verbatim(mill_config):
    decision = ModeDecision(ControlMode.AI, (), 0)
    ai = _rx(ControlMode.AI)
    assert arbitrate(ai, None, decision) is ai


def test_arbitrate_survival_takes_fallback_even_with_ai_present():
    decision = ModeDecision(ControlMode.SURVIVAL, ("vibration",), 0)
    ai = _rx(ControlMode.AI, {"feed": 60.0})
    fallback = _rx(ControlMode.SURVIVAL, {"feed": 48.0})
    chosen = arbitrate(ai, fallback, decision)
    assert chosen is fallback
    assert chosen.controls["feed"] == 48.0


def test_arbitrate_mode_mismatch():
    decision = ModeDecision(ControlMode.AI, (), 0)
    with pytest.raises(ModeMismatchError):
        arbitrate(None, None, decision)
    with pytest.raises(ModeMismatchError):
        arbitrate(_rx(ControlMode.SAFEGUARD), None, decision)


def test_arbitrate_output_mode_always_matches_decision(mill_config):
    for mode in (ControlMode.SAFEGUARD, ControlMode.SURVIVAL):
        decision = ModeDecision(mode, ("pressure",), 0)
        chosen = arbitrate(None, _rx(mode), decision)
        assert chosen.mode is decision.mode


# --- closed-loop survival property ---

def test_survival_drives_vibration_down_until_cleared(mill_config, mill_model, mill_outliers, eval_start_ms):
    plant = fixtures.mill_plant(mill_config, seed=1, start_ms=eval_start_ms)
    drift_t = eval_start_ms + 40_000
    plant.script = FaultScript(
        events=(FaultEvent("vibration", drift_t, drift_t + 120_000, FaultKind.MEAN_DRIFT, 0.15),)
    )
    bus = Bus(seed=3)
    checker = StreamChecker(mill_config, mill_outliers, baselines=dict(plant.state.values))
    loop = SteeringLoop(plant, mill_config, checker, bus, mill_model)
    episode: list[float] = []
    after: float | None = None
    for _ in range(160):
        res = loop.step()
        if res.decision is None:
            continue
        if res.decision.mode is ControlMode.SURVIVAL:
            episode.append(res.check.frame.values["vibration"])
        elif episode:
            after = res.check.frame.values["vibration"]
            break
    assert len(episode) >= 3
    # the pinned set point lands one step after engagement (actuation delay);
    # from then on noise-free vibration is non-increasing until cleared
    settled = episode[1:]
    diffs = [b - a for a, b in zip(settled, settled[1:])]
    assert all(d <= 1e-12 for d in diffs)
    assert after is not None and after <= 0.45
