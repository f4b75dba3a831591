"""One-step direction validation and the offline/online evaluation drivers.

One-step validation answers "did the prescription move each related control
the way the declared relations say it should" at every constraint-violating
step, without needing plant access. The offline and online drivers share the
steering loop code path, so with identity bus policies their reports agree
to the bit and any difference under injected latency is attributable to the
bus alone.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .ace import AceConfig, RelationSign, related_controls
from .bus import Bus, LatencyReport, TopicPolicy
from .checks import Frame, OutlierModel, Sample, StreamChecker, interpolate
from .errors import AlignmentError, SpanOverlapError
from .loop import SteeringLoop, StepResult
from .optimizer import ControlMode, Objective, Prescription, prescribe
from .plant import Plant
from .predictor import PredictorModel, TagMetrics, metrics_for, predict
from .safeguard import arbitrate, decide, safeguard_prescription


@dataclass(frozen=True)
class OneStepRecord:
    ts_ms: int
    constraint: str
    side: str            # above_hi | below_lo
    control: str
    expected: str        # decrease | increase
    actual: str          # decrease | increase | hold
    correct: bool
    mode: str


@dataclass(frozen=True)
class ValidationReport:
    records: tuple[OneStepRecord, ...]
    evaluated: int
    correct: int
    direction_correct_rate: float | None
    steps_evaluated: int
    steps_skipped: int
    by_mode: dict[str, dict[str, int]]

    def to_dict(self) -> dict:
        return {
            "evaluated": self.evaluated,
            "correct": self.correct,
            "direction_correct_rate": self.direction_correct_rate,
            "steps_evaluated": self.steps_evaluated,
            "steps_skipped": self.steps_skipped,
            "by_mode": self.by_mode,
        }


def _expected_direction(side: str, sign: RelationSign) -> str:
    if side == "above_hi":
        return "decrease" if sign is RelationSign.POSITIVE else "increase"
    return "increase" if sign is RelationSign.POSITIVE else "decrease"


def one_step_validate(
    prescriptions: Sequence[Prescription],
    frames: Sequence[Frame],
    config: AceConfig,
    hold_policy: str = "incorrect",
) -> ValidationReport:
    """Direction check of every prescription issued while a constraint sat
    outside its static bounds.

    A prescribed value below the control's current value counts as a
    decrease, above as an increase; an exact hold is incorrect when a
    correction was expected (set hold_policy="skipped" to drop such records
    instead). Only declared-relation controls are checked.
    """
    if hold_policy not in ("incorrect", "skipped"):
        raise ValueError(f"unknown hold_policy {hold_policy!r}")
    frame_at = {f.timestamp_ms: f for f in frames}
    records: list[OneStepRecord] = []
    steps_evaluated = 0
    steps_skipped = 0
    by_mode: dict[str, dict[str, int]] = {}
    for rx in prescriptions:
        frame = frame_at.get(rx.timestamp_ms)
        if frame is None:
            raise AlignmentError(f"no frame at prescription timestamp {rx.timestamp_ms}")
        step_records: list[OneStepRecord] = []
        for name, spec in config.tags.items():
            if spec.static_bounds is None:
                continue
            value = frame.values[name]
            lo, hi = spec.static_bounds
            if value > hi:
                side = "above_hi"
            elif value < lo:
                side = "below_lo"
            else:
                continue
            for rel in related_controls(config, name):
                current = frame.values[rel.cause]
                prescribed = rx.controls.get(rel.cause, current)
                if prescribed < current:
                    actual = "decrease"
                elif prescribed > current:
                    actual = "increase"
                else:
                    actual = "hold"
                if actual == "hold" and hold_policy == "skipped":
                    continue
                expected = _expected_direction(side, rel.sign)
                step_records.append(
                    OneStepRecord(
                        ts_ms=rx.timestamp_ms,
                        constraint=name,
                        side=side,
                        control=rel.cause,
                        expected=expected,
                        actual=actual,
                        correct=actual == expected,
                        mode=rx.mode.value,
                    )
                )
        if step_records:
            steps_evaluated += 1
            records.extend(step_records)
            for rec in step_records:
                slot = by_mode.setdefault(rec.mode, {"records": 0, "correct": 0})
                slot["records"] += 1
                slot["correct"] += int(rec.correct)
        else:
            steps_skipped += 1
    evaluated = len(records)
    correct = sum(1 for r in records if r.correct)
    rate = correct / evaluated if evaluated else None
    return ValidationReport(
        records=tuple(records),
        evaluated=evaluated,
        correct=correct,
        direction_correct_rate=rate,
        steps_evaluated=steps_evaluated,
        steps_skipped=steps_skipped,
        by_mode=by_mode,
    )


@dataclass
class RunResult:
    metrics: dict[str, TagMetrics]
    validation: ValidationReport
    aligned: list[tuple[int, str, float, float]]
    frames: list[Frame]
    raw_frames: list[Frame]
    prescriptions: list[Prescription]
    audit: list[dict]
    samples: list[Sample]
    latency: LatencyReport | None = None
    prescribe_wall_ms: list[float] = field(default_factory=list)

    def metrics_dict(self) -> dict:
        return {
            tag: {
                "mse": m.mse,
                "r_squared": m.r_squared,
                "correlation": m.correlation,
                "n": m.n,
            }
            for tag, m in sorted(self.metrics.items())
        }


def _collect(results: Sequence[StepResult], config: AceConfig) -> RunResult:
    """Fold per-step loop output into metrics, validation, and audit records."""
    period = config.sample_period_ms
    horizon = config.prediction_length * period
    frames: list[Frame] = []
    raw_frames: list[Frame] = []
    prescriptions: list[Prescription] = []
    audit: list[dict] = []
    predictions: dict[int, dict[str, float]] = {}
    walls: list[float] = []
    delivered: list[Sample] = []
    last_mode: str | None = None

    for res in results:
        frames.append(res.check.frame)
        raw_frames.append(res.check.raw_frame)
        delivered.extend(m.sample for m in res.delivered)
        audit.extend(res.check.alerts)
        if res.decision is not None:
            mode = res.decision.mode.value
            if mode != last_mode:
                audit.append(
                    {
                        "ts_ms": res.t_ms,
                        "from": last_mode,
                        "to": mode,
                        "triggering_tags": list(res.decision.triggering_tags),
                    }
                )
                last_mode = mode
        if res.prescription is not None:
            prescriptions.append(res.prescription)
            audit.append(res.prescription.audit_record())
        if res.predicted_ahead is not None:
            predictions[res.t_ms + horizon] = res.predicted_ahead
        if res.prescribe_wall_ms is not None:
            walls.append(res.prescribe_wall_ms)

    frame_at = {f.timestamp_ms: f for f in frames}
    pairs: dict[str, tuple[list[float], list[float]]] = {
        tag: ([], []) for tag in config.response_tags
    }
    aligned: list[tuple[int, str, float, float]] = []
    for ts in sorted(predictions):
        frame = frame_at.get(ts)
        if frame is None:
            continue
        for tag, value in predictions[ts].items():
            actual = frame.values[tag]
            pairs[tag][0].append(actual)
            pairs[tag][1].append(value)
            aligned.append((ts, tag, actual, value))
    metrics = {
        tag: metrics_for(np.asarray(actuals), np.asarray(preds))
        for tag, (actuals, preds) in pairs.items()
        if actuals
    }
    validation = one_step_validate(prescriptions, frames, config)
    return RunResult(
        metrics=metrics,
        validation=validation,
        aligned=aligned,
        frames=frames,
        raw_frames=raw_frames,
        prescriptions=prescriptions,
        audit=audit,
        samples=delivered,
        prescribe_wall_ms=walls,
    )


def run_offline(
    frames: Sequence[Frame],
    model: PredictorModel,
    config: AceConfig,
    outlier_model: OutlierModel,
    baselines: dict[str, float] | None = None,
    drift_samples: int = 50,
    drift_tolerance: float = 0.5,
    enforce_span: bool = True,
) -> RunResult:
    """Replay historical frames through the full pipeline with no plant
    feedback; prescriptions are computed and recorded but never applied."""
    if enforce_span and model.training_span is not None and frames:
        lo, hi = frames[0].timestamp_ms, frames[-1].timestamp_ms
        t_lo, t_hi = model.training_span
        if lo <= t_hi and hi >= t_lo:
            raise SpanOverlapError(
                f"holdout span [{lo}, {hi}] overlaps training span [{t_lo}, {t_hi}]"
            )
    checker = StreamChecker(
        config,
        outlier_model,
        baselines=baselines,
        drift_samples=drift_samples,
        drift_tolerance=drift_tolerance,
    )
    results: list[StepResult] = []
    counter = 0
    objective = Objective.from_config(config)

    for frame in frames:
        for tag, value in frame.values.items():
            checker.offer(Sample(timestamp_ms=frame.timestamp_ms, tag=tag, value=value))
        check = checker.tick(frame.timestamp_ms)
        decision = None
        prescription = None
        predicted_ahead = None
        if check.window is not None and check.routing is not None:
            decision = decide(check.window, check.routing, config)
            if check.window.all_stable():
                predicted_ahead = predict(model, check.window)
            if decision.mode is ControlMode.AI:
                counter += 1
                prescription = prescribe(
                    model,
                    check.window,
                    config,
                    objective,
                    prescription_id=f"rx-{counter:06d}",
                )
            else:
                counter += 1
                prescription, extra = safeguard_prescription(
                    check.window, decision, config, prescription_id=f"rx-{counter:06d}"
                )
                check.alerts.extend(extra)
                prescription = arbitrate(None, prescription, decision)
        results.append(
            StepResult(
                step=len(results) + 1,
                t_ms=frame.timestamp_ms,
                check=check,
                decision=decision,
                prescription=prescription,
                applied_controls={},
                predicted_ahead=predicted_ahead,
                prescribe_wall_ms=None,
            )
        )
    return _collect(results, config)


def run_online(
    plant: Plant,
    policies: dict[str, TopicPolicy],
    model: PredictorModel,
    config: AceConfig,
    steps: int,
    outlier_model: OutlierModel,
    baselines: dict[str, float] | None = None,
    bus_seed: int = 0,
    drift_samples: int = 50,
    drift_tolerance: float = 0.5,
    grid_size: int = 11,
) -> RunResult:
    """Closed loop through the bus with injected per-topic latency and loss;
    prescriptions are applied back to the plant each step."""
    bus = Bus(seed=bus_seed, policies=policies)
    checker = StreamChecker(
        config,
        outlier_model,
        baselines=baselines,
        drift_samples=drift_samples,
        drift_tolerance=drift_tolerance,
    )
    loop = SteeringLoop(plant, config, checker, bus, model, grid_size=grid_size)
    results = loop.run(steps)
    collected = _collect(results, config)
    collected.latency = bus.measure()
    return collected


# --- report writers (deterministic bytes: sorted keys, repr floats) ---

def write_records_csv(report: ValidationReport, path: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["ts_ms", "constraint", "side", "control", "expected", "actual", "correct"])
        for r in report.records:
            writer.writerow(
                [r.ts_ms, r.constraint, r.side, r.control, r.expected, r.actual, str(r.correct).lower()]
            )


def write_aligned_csv(aligned: Sequence[tuple[int, str, float, float]], path: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["timestamp_ms", "tag", "actual", "predicted"])
        for ts, tag, actual, predicted in aligned:
            writer.writerow([ts, tag, repr(actual), repr(predicted)])


def write_samples_csv(samples: Sequence[Sample], path: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["timestamp_ms", "tag", "value"])
        for s in samples:
            writer.writerow([s.timestamp_ms, s.tag, repr(s.value)])


def read_samples_csv(path: str) -> list[Sample]:
    samples: list[Sample] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            samples.append(
                Sample(
                    timestamp_ms=int(row["timestamp_ms"]),
                    tag=row["tag"],
                    value=float(row["value"]),
                )
            )
    return samples


def write_frames_csv(frames: Sequence[Frame], path: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["timestamp_ms", "tag", "value"])
        for frame in frames:
            for tag, value in frame.values.items():
                writer.writerow([frame.timestamp_ms, tag, repr(value)])


def frames_from_samples(
    samples: Sequence[Sample],
    config: AceConfig,
    baselines: dict[str, float] | None = None,
) -> list[Frame]:
    return interpolate(
        samples,
        list(config.tags),
        config.sample_period_ms,
        baselines=baselines,
    )


def write_json(doc: dict, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_audit_jsonl(records: Sequence[dict], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record, sort_keys=True) + "\n")


def timing_summary(walls: Sequence[float]) -> dict:
    if not walls:
        return {"count": 0}
    arr = np.asarray(walls)
    return {
        "count": len(walls),
        "mean_ms": float(arr.mean()),
        "max_ms": float(arr.max()),
        "p95_ms": float(np.percentile(arr, 95.0)),
    }
