from __future__ import annotations

import pytest

from optisteer import fixtures
from optisteer.ace import RelationSign
from optisteer.bus import TopicPolicy
from optisteer.checks import Frame, Provenance
from optisteer.errors import AlignmentError, SpanOverlapError
from optisteer.harness import (
    one_step_validate,
    read_samples_csv,
    run_offline,
    run_online,
    write_samples_csv,
)
from optisteer.loop import topic_for
from optisteer.optimizer import ControlMode, Prescription
from optisteer.plant import FaultEvent, FaultKind, FaultScript


def frame_at(ts, values):
    return Frame(ts, dict(values), {t: Provenance.MEASURED for t in values})


def rx_at(ts, controls, mode=ControlMode.SAFEGUARD):
    return Prescription(
        id=f"rx-{ts}",
        timestamp_ms=ts,
        mode=mode,
        controls=dict(controls),
        predicted={},
        objective_value=None,
        rationale="",
    )


MILL_VALUES = {"feed": 50.0, "vibration": 0.32, "pressure": 4950.0, "output": 100.0}


def test_correct_direction_record(mill_config):
    frames = [frame_at(1000, {**MILL_VALUES, "pressure": 5100.0})]
    report = one_step_validate([rx_at(1000, {"feed": 48.0})], frames, mill_config)
    assert report.evaluated == 1
    (record,) = report.records
    assert record.constraint == "pressure"
    assert record.side == "above_hi"
    assert record.control == "feed"
    assert record.expected == "decrease"
    assert record.actual == "decrease"
    assert record.correct
    assert report.direction_correct_rate == 1.0


def test_no_violations_reports_absent_rate(mill_config):
    frames = [frame_at(1000, MILL_VALUES)]
    report = one_step_validate([rx_at(1000, {"feed": 50.0})], frames, mill_config)
    assert report.evaluated == 0
    assert report.direction_correct_rate is None
    assert report.steps_skipped == 1


def test_hold_counts_as_incorrect(mill_config):
    frames = [frame_at(1000, {**MILL_VALUES, "pressure": 5100.0})]
    report = one_step_validate([rx_at(1000, {"feed": 50.0})], frames, mill_config)
    (record,) = report.records
    assert record.actual == "hold"
    assert not record.correct
    assert report.direction_correct_rate == 0.0


def test_hold_policy_skipped_drops_record(mill_config):
    frames = [frame_at(1000, {**MILL_VALUES, "pressure": 5100.0})]
    report = one_step_validate(
        [rx_at(1000, {"feed": 50.0})], frames, mill_config, hold_policy="skipped"
    )
    assert report.evaluated == 0
    assert report.direction_correct_rate is None


def test_below_lo_expects_mirrored_direction(mill_config):
    frames = [frame_at(1000, {**MILL_VALUES, "pressure": 2500.0})]
    report = one_step_validate([rx_at(1000, {"feed": 52.0})], frames, mill_config)
    (record,) = report.records
    assert record.side == "below_lo"
    assert record.expected == "increase"
    assert record.correct


def test_misaligned_prescription_raises(mill_config):
    frames = [frame_at(1000, MILL_VALUES)]
    with pytest.raises(AlignmentError):
        one_step_validate([rx_at(2000, {"feed": 48.0})], frames, mill_config)


def test_adding_correct_record_never_lowers_rate(mill_config):
    violated = {**MILL_VALUES, "pressure": 5100.0}
    frames = [frame_at(1000, violated), frame_at(2000, violated)]
    partial = one_step_validate([rx_at(1000, {"feed": 50.0})], frames[:1], mill_config)
    extended = one_step_validate(
        [rx_at(1000, {"feed": 50.0}), rx_at(2000, {"feed": 48.0})], frames, mill_config
    )
    assert extended.direction_correct_rate >= partial.direction_correct_rate


def brute_force_validate(prescriptions, frames, config):
    """Independent re-derivation: raw loops over tags and relations, no reuse
    of the harness helpers."""
    frame_index = {f.timestamp_ms: f for f in frames}
    out = []
    for rx in prescriptions:
        frame = frame_index[rx.timestamp_ms]
        for rel in config.relations:
            spec = config.tags[rel.effect]
            if spec.static_bounds is None:
                continue
            value = frame.values[rel.effect]
            lo, hi = spec.static_bounds
            if lo <= value <= hi:
                continue
            side = "above_hi" if value > hi else "below_lo"
            if side == "above_hi":
                expected = "decrease" if rel.sign is RelationSign.POSITIVE else "increase"
            else:
                expected = "increase" if rel.sign is RelationSign.POSITIVE else "decrease"
            current = frame.values[rel.cause]
            prescribed = rx.controls.get(rel.cause, current)
            if prescribed < current:
                actual = "decrease"
            elif prescribed > current:
                actual = "increase"
            else:
                actual = "hold"
            out.append((rx.timestamp_ms, rel.effect, side, rel.cause, expected, actual, actual == expected))
    return out


def test_validator_agrees_with_brute_force_on_closed_loop(mill_config, mill_model, mill_outliers, eval_start_ms):
    plant = fixtures.mill_plant(mill_config, seed=2, start_ms=eval_start_ms)
    t0 = eval_start_ms + 20_000
    plant.script = FaultScript(
        events=tuple(
            FaultEvent("pressure", t0 + k * 50_000, t0 + k * 50_000 + 8_000, FaultKind.MEAN_DRIFT, 150.0)
            for k in range(4)
        )
    )
    result = run_online(
        plant, {}, mill_model, mill_config, steps=250,
        outlier_model=mill_outliers, baselines=dict(plant.state.values), bus_seed=4,
    )
    expected = brute_force_validate(result.prescriptions, result.frames, mill_config)
    got = [
        (r.ts_ms, r.constraint, r.side, r.control, r.expected, r.actual, r.correct)
        for r in result.validation.records
    ]
    assert expected  # scenario produced violations
    assert got == expected


def test_run_offline_is_deterministic(mill_config, mill_model, mill_outliers, eval_start_ms, tmp_path):
    plant = fixtures.mill_plant(mill_config, seed=3, start_ms=eval_start_ms)
    online = run_online(
        plant, {}, mill_model, mill_config, steps=120,
        outlier_model=mill_outliers, baselines=dict(plant.state.values), bus_seed=5,
    )
    path = tmp_path / "capture.csv"
    write_samples_csv(online.samples, str(path))
    replayed = read_samples_csv(str(path))
    baselines = dict(fixtures.mill_plant(mill_config, seed=3, start_ms=eval_start_ms).state.values)

    from optisteer.harness import frames_from_samples

    frames = frames_from_samples(replayed, mill_config, baselines=baselines)
    first = run_offline(frames, mill_model, mill_config, mill_outliers, baselines=baselines)
    second = run_offline(frames, mill_model, mill_config, mill_outliers, baselines=baselines)
    assert first.metrics_dict() == second.metrics_dict()
    assert first.validation == second.validation
    assert [rx.audit_record() for rx in first.prescriptions] == [
        rx.audit_record() for rx in second.prescriptions
    ]


def test_offline_rejects_training_span_overlap(mill_config, mill_model, mill_outliers, mill_training):
    with pytest.raises(SpanOverlapError):
        run_offline(mill_training["frames"][:50], mill_model, mill_config, mill_outliers)


def test_online_equals_offline_with_identity_bus(mill_config, mill_model, mill_outliers, eval_start_ms):
    plant = fixtures.mill_plant(mill_config, seed=4, start_ms=eval_start_ms)
    baselines = dict(plant.state.values)
    online = run_online(
        plant, {}, mill_model, mill_config, steps=200,
        outlier_model=mill_outliers, baselines=baselines, bus_seed=6,
    )
    offline = run_offline(online.raw_frames, mill_model, mill_config, mill_outliers, baselines=baselines)
    assert set(online.metrics) == set(offline.metrics)
    for tag in online.metrics:
        a, b = online.metrics[tag], offline.metrics[tag]
        assert a.n == b.n
        assert abs(a.mse - b.mse) <= 1e-9
        if a.correlation is not None:
            assert abs(a.correlation - b.correlation) <= 1e-9
        if a.r_squared is not None:
            assert abs(a.r_squared - b.r_squared) <= 1e-9
    assert online.validation.to_dict() == offline.validation.to_dict()


def test_latency_skew_degrades_correlation(mill_config, mill_model, mill_outliers, eval_start_ms):
    noise = {"vibration": 0.004, "pressure": 6.0, "output": 0.5}

    def run(policies):
        plant = fixtures.mill_plant(mill_config, seed=11, noise=noise, start_ms=eval_start_ms)
        return run_online(
            plant, policies, mill_model, mill_config, steps=300,
            outlier_model=mill_outliers, baselines=dict(plant.state.values), bus_seed=5,
        )

    baseline = run({})
    skewed = run({topic_for("vibration"): TopicPolicy(base_latency_ms=5_000.0)})
    assert skewed.metrics["vibration"].correlation < baseline.metrics["vibration"].correlation
    mean_base = sum(m.correlation for m in baseline.metrics.values()) / len(baseline.metrics)
    mean_skew = sum(m.correlation for m in skewed.metrics.values()) / len(skewed.metrics)
    assert mean_skew < mean_base


def test_total_loss_holds_values_and_alerts(mill_config, mill_model, mill_outliers, eval_start_ms):
    plant = fixtures.mill_plant(mill_config, seed=12, start_ms=eval_start_ms)
    result = run_online(
        plant,
        {topic_for("vibration"): TopicPolicy(loss_probability=1.0)},
        mill_model,
        mill_config,
        steps=120,
        outlier_model=mill_outliers,
        baselines=dict(plant.state.values),
        bus_seed=7,
    )
    # every vibration frame value is the held cold-start baseline
    held = [f.provenance["vibration"] for f in result.frames]
    assert all(p is Provenance.HELD for p in held)
    stats = result.latency.per_topic[topic_for("vibration")]
    assert stats.delivered == 0 and stats.lost == stats.published > 0
    assert any(a.get("tag") == "vibration" for a in result.audit if "kind" in a)


def test_timing_stats_collected(mill_config, mill_model, mill_outliers, eval_start_ms):
    plant = fixtures.mill_plant(mill_config, seed=13, start_ms=eval_start_ms)
    result = run_online(
        plant, {}, mill_model, mill_config, steps=60,
        outlier_model=mill_outliers, baselines=dict(plant.state.values), bus_seed=8,
    )
    assert result.prescribe_wall_ms
    # desk-scale per-step budget: generous 250 ms deadline
    assert max(result.prescribe_wall_ms) < 250.0
