"""Command-line entry points: simulate, train, eval-offline, eval-online,
validate, and steer.

Every pipeline subcommand is deterministic for fixed inputs and seeds: model
files, reports, and audit logs come out byte-identical across repeated runs.
Wall-clock prescribe timing is the one non-reproducible measurement, so it is
written to its own diagnostics file (timing.json), never into the reports.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import fixtures
from .ace import parse_ace
from .bus import TopicPolicy
from .checks import OutlierModel, fit_outlier_model
from .errors import SteeringError
from .harness import (
    frames_from_samples,
    one_step_validate,
    read_samples_csv,
    run_offline,
    run_online,
    timing_summary,
    write_aligned_csv,
    write_audit_jsonl,
    write_frames_csv,
    write_json,
    write_records_csv,
    write_samples_csv,
)
from .loop import topic_for
from .optimizer import ControlMode, Prescription
from .plant import plant_from_dict, script_from_dict
from .predictor import build_dataset, load_model, save_model, train

ENV_CONFIG = "OPTISTEER_CONFIG"


def _load_config(args):
    path = args.config or os.environ.get(ENV_CONFIG)
    if not path:
        raise SteeringError(f"no configuration: pass --config or set {ENV_CONFIG}")
    return parse_ace(Path(path).read_text(encoding="utf-8"))


def _load_plant(args, config, seed: int, start_ms: int = 0):
    if getattr(args, "plant", None):
        doc = json.loads(Path(args.plant).read_text(encoding="utf-8"))
        doc.setdefault("start_ms", start_ms)
        plant = plant_from_dict(doc, config, seed=seed)
    else:
        plant = fixtures.mill_plant(config, seed=seed, start_ms=start_ms)
    if getattr(args, "faults", None):
        script = script_from_dict(
            json.loads(Path(args.faults).read_text(encoding="utf-8")), config
        )
        plant.script = script
    return plant


def _baselines(plant) -> dict[str, float]:
    return dict(plant.state.values)


def _load_outliers(path: str) -> OutlierModel:
    return OutlierModel.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _parse_policies(entries, config) -> dict[str, TopicPolicy]:
    policies: dict[str, TopicPolicy] = {}
    for entry in entries or []:
        name, _, spec = entry.partition("=")
        parts = spec.split(",")
        if len(parts) != 3:
            raise SteeringError(
                f"--policy wants tag=base_ms,jitter_ms,loss; got {entry!r}"
            )
        topic = topic_for(name) if name in config.tags else name
        policies[topic] = TopicPolicy(
            base_latency_ms=float(parts[0]),
            jitter_ms=float(parts[1]),
            loss_probability=float(parts[2]),
        )
    return policies


def cmd_simulate(args) -> int:
    config = _load_config(args)
    plant = _load_plant(args, config, seed=args.seed, start_ms=args.start_ms)
    samples = fixtures.excitation_walk(plant, args.steps, seed=args.seed + 1)
    write_samples_csv(samples, args.out)
    print(f"wrote {len(samples)} samples to {args.out}")
    return 0


def cmd_train(args) -> int:
    config = _load_config(args)
    samples = read_samples_csv(args.data)
    by_tag: dict[str, list[float]] = {}
    for s in samples:
        by_tag.setdefault(s.tag, []).append(s.value)
    outlier_model = fit_outlier_model(by_tag, config.outlier_fence_k)
    frames = frames_from_samples(samples, config)
    dataset = build_dataset(frames, config)
    model = train(dataset, ridge_lambda=args.ridge_lambda)
    save_model(model, args.out)
    if args.outlier_out:
        write_json(outlier_model.to_dict(), args.outlier_out)
    print(f"trained on {dataset.features.shape[0]} rows; model at {args.out}")
    return 0


def _write_reports(out_dir: str, result, include_latency: bool) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_json({"tags": result.metrics_dict()}, str(out / "metrics.json"))
    write_json(result.validation.to_dict(), str(out / "validation.json"))
    write_records_csv(result.validation, str(out / "records.csv"))
    write_aligned_csv(result.aligned, str(out / "aligned.csv"))
    write_frames_csv(result.frames, str(out / "frames.csv"))
    write_samples_csv(result.samples, str(out / "samples.csv"))
    write_audit_jsonl(result.audit, str(out / "audit.jsonl"))
    if include_latency and result.latency is not None:
        write_json(result.latency.to_dict(), str(out / "latency.json"))
    if result.prescribe_wall_ms:
        # wall-clock diagnostics; deliberately outside the deterministic set
        write_json(timing_summary(result.prescribe_wall_ms), str(out / "timing.json"))


def cmd_eval_offline(args) -> int:
    config = _load_config(args)
    model = load_model(args.model)
    outliers = _load_outliers(args.outliers)
    samples = read_samples_csv(args.data)
    plant = _load_plant(args, config, seed=0)
    frames = frames_from_samples(samples, config, baselines=_baselines(plant))
    result = run_offline(
        frames, model, config, outliers, baselines=_baselines(plant)
    )
    _write_reports(args.out_dir, result, include_latency=False)
    rate = result.validation.direction_correct_rate
    print(f"offline: {len(frames)} frames, direction rate {rate}")
    return 0


def cmd_eval_online(args) -> int:
    config = _load_config(args)
    model = load_model(args.model)
    outliers = _load_outliers(args.outliers)
    start_ms = args.start_ms
    if start_ms is None and model.training_span is not None:
        start_ms = model.training_span[1] + config.sample_period_ms
    plant = _load_plant(args, config, seed=args.seed, start_ms=start_ms or 0)
    policies = _parse_policies(args.policy, config)
    result = run_online(
        plant,
        policies,
        model,
        config,
        steps=args.steps,
        outlier_model=outliers,
        baselines=_baselines(plant),
        bus_seed=args.seed,
    )
    _write_reports(args.out_dir, result, include_latency=True)
    rate = result.validation.direction_correct_rate
    print(f"online: {args.steps} steps, direction rate {rate}")
    return 0


def _frames_from_csv(path: str, config):
    from .checks import Frame, Provenance

    rows = read_samples_csv(path)
    by_ts: dict[int, dict[str, float]] = {}
    for s in rows:
        by_ts.setdefault(s.timestamp_ms, {})[s.tag] = s.value
    frames = []
    for ts in sorted(by_ts):
        values = by_ts[ts]
        frames.append(
            Frame(
                timestamp_ms=ts,
                values=values,
                provenance={t: Provenance.MEASURED for t in values},
            )
        )
    return frames


def cmd_validate(args) -> int:
    config = _load_config(args)
    prescriptions: list[Prescription] = []
    with open(args.audit, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            doc = json.loads(line)
            if "controls" in doc and "id" in doc:
                prescriptions.append(
                    Prescription(
                        id=doc["id"],
                        timestamp_ms=int(doc["ts_ms"]),
                        mode=ControlMode(doc["mode"]),
                        controls={k: float(v) for k, v in doc["controls"].items()},
                        predicted={k: float(v) for k, v in doc.get("predicted", {}).items()},
                        objective_value=doc.get("objective_value"),
                        rationale=doc.get("rationale", ""),
                    )
                )
    frames = _frames_from_csv(args.frames, config)
    report = one_step_validate(prescriptions, frames, config, hold_policy=args.hold_policy)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_json(report.to_dict(), str(out / "validation.json"))
    write_records_csv(report, str(out / "records.csv"))
    print(
        f"validated {report.evaluated} records over {report.steps_evaluated} steps; "
        f"rate {report.direction_correct_rate}"
    )
    return 0


def cmd_steer(args) -> int:
    import uvicorn

    from .service import SteeringService, SteerMode, create_app

    config = _load_config(args)
    model = load_model(args.model) if args.model else None
    outliers = _load_outliers(args.outliers)
    start_ms = args.start_ms
    if start_ms is None and model is not None and model.training_span is not None:
        start_ms = model.training_span[1] + config.sample_period_ms
    plant = _load_plant(args, config, seed=args.seed, start_ms=start_ms or 0)
    policies = _parse_policies(args.policy, config)
    service = SteeringService(
        plant,
        config,
        model,
        outliers,
        mode=SteerMode(args.mode),
        baselines=_baselines(plant),
        policies=policies,
        bus_seed=args.seed,
        approval_timeout_ms=args.approval_timeout_ms,
        prescribe_deadline_ms=args.prescribe_deadline_ms,
        audit_path=args.audit,
    )
    app = create_app(service, ui_dir=args.serve_ui)
    host, _, port = args.listen.partition(":")
    service.start(pace_s=args.pace_ms / 1000.0)
    try:
        uvicorn.run(app, host=host or "127.0.0.1", port=int(port or 8000), log_level="warning")
    finally:
        service.stop()
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="optisteer",
        description="Desk-scale industrial AI steering stack.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help=f"ACE document path (fallback: ${ENV_CONFIG})")

    p = sub.add_parser("simulate", help="run the plant open-loop and capture a sample CSV")
    common(p)
    p.add_argument("--plant", help="plant fixture JSON (default: built-in mill)")
    p.add_argument("--faults", help="fault script JSON")
    p.add_argument("--steps", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--start-ms", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", help="fit the regression and outlier models from a CSV")
    common(p)
    p.add_argument("--data", required=True, help="training samples CSV")
    p.add_argument("--out", required=True, help="model file path")
    p.add_argument("--outlier-out", help="outlier fence sidecar path")
    p.add_argument("--ridge-lambda", type=float, default=1e-6)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval-offline", help="replay a holdout CSV through the pipeline")
    common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--outliers", required=True)
    p.add_argument("--data", required=True, help="holdout samples CSV")
    p.add_argument("--plant", help="plant fixture JSON for cold-start baselines")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_eval_offline)

    p = sub.add_parser("eval-online", help="closed-loop run through the bus")
    common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--outliers", required=True)
    p.add_argument("--plant", help="plant fixture JSON (default: built-in mill)")
    p.add_argument("--faults", help="fault script JSON")
    p.add_argument("--steps", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--start-ms", type=int)
    p.add_argument(
        "--policy",
        action="append",
        help="per-tag bus policy tag=base_ms,jitter_ms,loss (repeatable)",
    )
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_eval_online)

    p = sub.add_parser("validate", help="one-step direction report from captured logs")
    common(p)
    p.add_argument("--audit", required=True, help="audit JSONL with prescription records")
    p.add_argument("--frames", required=True, help="frames CSV (timestamp_ms,tag,value)")
    p.add_argument("--hold-policy", choices=["incorrect", "skipped"], default="incorrect")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("steer", help="run the steering service")
    common(p)
    p.add_argument("--model")
    p.add_argument("--outliers", required=True)
    p.add_argument("--plant")
    p.add_argument("--faults")
    p.add_argument("--mode", choices=["auto", "supervised"], default="supervised")
    p.add_argument("--listen", default="127.0.0.1:8000")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--start-ms", type=int)
    p.add_argument("--pace-ms", type=float, default=250.0)
    p.add_argument("--policy", action="append")
    p.add_argument("--approval-timeout-ms", type=int, default=30_000)
    p.add_argument("--prescribe-deadline-ms", type=float)
    p.add_argument("--audit", help="append-only event log path")
    p.add_argument("--serve-ui", help="static console asset directory")
    p.set_defaults(func=cmd_steer)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (SteeringError, OSError, json.JSONDecodeError, ValueError) as exc:
        print(
            json.dumps({"error": type(exc).__name__, "message": str(exc)}),
            file=sys.stderr,
        )
        return 1


if __name__ == "__main__":
    sys.exit(main())
