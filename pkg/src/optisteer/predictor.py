"""Windowed linear regression: flattened response/control histories predict
each monitored tag one prediction-length ahead.

One independent ridge model per output tag, solved in closed form. Linear is
deliberate: the synthetic plant is linear, so recovery is exact and every
oracle stays hand-checkable, and the train/predict boundary admits richer
model classes later without touching callers.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .ace import AceConfig
from .checks import Frame, Window, check_window_stability
from .errors import (
    FingerprintMismatchError,
    GapError,
    InsufficientDataError,
    NonFiniteError,
    SingularError,
    UnstableWindowError,
)

DEFAULT_RIDGE_LAMBDA = 1e-6
MODEL_FILE_VERSION = 1


def feature_order(config: AceConfig) -> tuple[str, ...]:
    """Flattened feature naming: response tags then control tags, each oldest
    lag first, with a trailing intercept."""
    w = config.window_size
    entries: list[str] = []
    for tag in config.response_tags + config.control_tags:
        for lag in range(w - 1, -1, -1):
            entries.append(f"{tag}@lag{lag}")
    entries.append("intercept")
    return tuple(entries)


def fingerprint_for(w: int, delta_t: int, order: Sequence[str]) -> str:
    payload = json.dumps(
        {"w": w, "delta_t": delta_t, "feature_order": list(order)}, sort_keys=True
    )
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def config_fingerprint(config: AceConfig) -> str:
    return fingerprint_for(
        config.window_size, config.prediction_length, feature_order(config)
    )


@dataclass(frozen=True)
class PredictorModel:
    w: int
    delta_t: int
    ridge_lambda: float
    feature_order: tuple[str, ...]
    outputs: dict[str, np.ndarray]      # tag -> coefficient vector
    fingerprint: str
    training_span: tuple[int, int] | None = None
    version: int = MODEL_FILE_VERSION

    def coefficients(self, tag: str) -> np.ndarray:
        return self.outputs[tag]


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray                # [n, d]
    targets: dict[str, np.ndarray]      # tag -> [n]
    row_ts: np.ndarray                  # timestamp of each row's last window slot
    target_ts: np.ndarray               # timestamp each row predicts
    feature_order: tuple[str, ...]
    span: tuple[int, int]
    w: int
    delta_t: int


@dataclass(frozen=True)
class TagMetrics:
    mse: float
    r_squared: float | None
    correlation: float | None
    n: int


def _check_contiguous(frames: Sequence[Frame], period_ms: int) -> None:
    for prev, cur in zip(frames, frames[1:]):
        if cur.timestamp_ms - prev.timestamp_ms != period_ms:
            raise GapError(
                f"frames jump from {prev.timestamp_ms} to {cur.timestamp_ms}; "
                f"expected steps of {period_ms} ms"
            )


def _row_features(
    frames: Sequence[Frame], t: int, config: AceConfig
) -> list[float]:
    w = config.window_size
    row: list[float] = []
    for tag in config.response_tags + config.control_tags:
        for i in range(t - w + 1, t + 1):
            row.append(frames[i].values[tag])
    row.append(1.0)
    return row


def _row_unstable(
    raw_frames: Sequence[Frame], t: int, config: AceConfig
) -> bool:
    w = config.window_size
    for tag, spec in config.tags.items():
        if spec.broken_sensor_bounds is None:
            continue
        values = [raw_frames[i].values[tag] for i in range(t - w + 1, t + 1)]
        stable, _ = check_window_stability(
            values, spec.broken_sensor_bounds, config.broken_fraction_limit
        )
        if not stable:
            return True
    return False


def build_dataset(
    frames: Sequence[Frame],
    config: AceConfig,
    raw_frames: Sequence[Frame] | None = None,
) -> Dataset:
    """One regression row per window position; rows whose raw window fails the
    stability vote for any tag are dropped.

    raw_frames supplies the pre-padding values for the vote; when omitted the
    given frames are voted on directly.
    """
    w, dt = config.window_size, config.prediction_length
    if len(frames) < w + dt:
        raise InsufficientDataError(
            f"need at least w + prediction_length = {w + dt} frames, got {len(frames)}"
        )
    _check_contiguous(frames, config.sample_period_ms)
    if raw_frames is None:
        raw_frames = frames
    rows: list[list[float]] = []
    row_ts: list[int] = []
    target_rows: dict[str, list[float]] = {tag: [] for tag in config.response_tags}
    target_ts: list[int] = []
    for t in range(w - 1, len(frames) - dt):
        if _row_unstable(raw_frames, t, config):
            continue
        rows.append(_row_features(frames, t, config))
        row_ts.append(frames[t].timestamp_ms)
        target_ts.append(frames[t + dt].timestamp_ms)
        for tag in config.response_tags:
            target_rows[tag].append(frames[t + dt].values[tag])
    if not rows:
        raise InsufficientDataError("every candidate row was excluded as unstable")
    features = np.asarray(rows, dtype=float)
    if not np.all(np.isfinite(features)):
        raise NonFiniteError("dataset features contain non-finite values")
    targets = {tag: np.asarray(vals, dtype=float) for tag, vals in target_rows.items()}
    for tag, z in targets.items():
        if not np.all(np.isfinite(z)):
            raise NonFiniteError(f"targets for {tag!r} contain non-finite values")
    return Dataset(
        features=features,
        targets=targets,
        row_ts=np.asarray(row_ts),
        target_ts=np.asarray(target_ts),
        feature_order=feature_order(config),
        span=(int(frames[0].timestamp_ms), int(frames[-1].timestamp_ms)),
        w=w,
        delta_t=dt,
    )


def _solve_ridge(X: np.ndarray, z: np.ndarray, lam: float) -> np.ndarray:
    """Minimize ||X b - z||^2 + lam * ||b||^2 with the intercept unpenalized.

    Solved as an augmented least-squares system, then polished with Newton
    steps on the quadratic objective so the stationarity certificate
    2 X^T (X b - z) + 2 lam b holds to tight tolerance even when the raw
    feature columns are badly scaled.
    """
    n, d = X.shape
    penalty = np.ones(d)
    penalty[-1] = 0.0  # intercept
    if lam > 0.0:
        aug = np.sqrt(lam) * np.diag(penalty)[penalty > 0]
        A = np.vstack([X, aug])
        b = np.concatenate([z, np.zeros(aug.shape[0])])
    else:
        if n < d or np.linalg.matrix_rank(X) < d:
            raise SingularError(
                "unregularized fit is rank-deficient; supply ridge_lambda > 0"
            )
        A, b = X, z
    beta = np.linalg.lstsq(A, b, rcond=None)[0]

    H = 2.0 * (X.T @ X + lam * np.diag(penalty))
    for _ in range(2):
        grad = 2.0 * (X.T @ (X @ beta - z)) + 2.0 * lam * penalty * beta
        try:
            delta = np.linalg.solve(H, -grad)
        except np.linalg.LinAlgError:
            delta = np.linalg.lstsq(H, -grad, rcond=None)[0]
        beta = beta + delta
    return beta


def train(dataset: Dataset, ridge_lambda: float = DEFAULT_RIDGE_LAMBDA) -> PredictorModel:
    n, d = dataset.features.shape
    if ridge_lambda < 0:
        raise NonFiniteError("ridge_lambda must be >= 0")
    if ridge_lambda == 0.0 and n < d:
        raise SingularError(f"{n} rows cannot determine {d} coefficients without ridge")
    outputs: dict[str, np.ndarray] = {}
    for tag, z in dataset.targets.items():
        beta = _solve_ridge(dataset.features, z, ridge_lambda)
        if not np.all(np.isfinite(beta)):
            raise NonFiniteError(f"training produced non-finite coefficients for {tag!r}")
        outputs[tag] = beta
    return PredictorModel(
        w=dataset.w,
        delta_t=dataset.delta_t,
        ridge_lambda=ridge_lambda,
        feature_order=dataset.feature_order,
        outputs=outputs,
        fingerprint=fingerprint_for(dataset.w, dataset.delta_t, dataset.feature_order),
        training_span=dataset.span,
    )


def gradient_norm(model: PredictorModel, dataset: Dataset, tag: str) -> float:
    """Norm of the ridge gradient at the stored solution; the optimizer's
    stationarity certificate."""
    X = dataset.features
    z = dataset.targets[tag]
    beta = model.outputs[tag]
    penalty = np.ones(len(beta))
    penalty[-1] = 0.0
    grad = 2.0 * (X.T @ (X @ beta - z)) + 2.0 * model.ridge_lambda * penalty * beta
    return float(np.linalg.norm(grad))


def window_features(model: PredictorModel, window: Window) -> np.ndarray:
    frames = window.frames
    if len(frames) < model.w:
        raise InsufficientDataError(
            f"window holds {len(frames)} frames; model needs {model.w}"
        )
    values: list[float] = []
    for entry in model.feature_order:
        if entry == "intercept":
            values.append(1.0)
            continue
        tag, lag_s = entry.rsplit("@lag", 1)
        values.append(frames[len(frames) - 1 - int(lag_s)].values[tag])
    return np.asarray(values, dtype=float)


def predict(
    model: PredictorModel,
    window: Window,
    config: AceConfig | None = None,
    require_stable: bool = True,
) -> dict[str, float]:
    """Dot product of each output's coefficients with the window features."""
    if config is not None and config_fingerprint(config) != model.fingerprint:
        raise FingerprintMismatchError(
            "model feature ordering does not match the active configuration"
        )
    if require_stable:
        unstable = [t for t, ok in window.stability.items() if not ok]
        if unstable:
            raise UnstableWindowError(f"window unstable for {unstable}")
    x = window_features(model, window)
    return {tag: float(beta @ x) for tag, beta in model.outputs.items()}


def metrics_for(actual: np.ndarray, predicted: np.ndarray) -> TagMetrics:
    n = len(actual)
    mse = float(np.mean((predicted - actual) ** 2))
    r_squared: float | None = None
    correlation: float | None = None
    if n >= 2:
        ss_tot = float(np.sum((actual - actual.mean()) ** 2))
        if ss_tot > 0.0:
            r_squared = 1.0 - float(np.sum((predicted - actual) ** 2)) / ss_tot
        if np.std(actual) > 0.0 and np.std(predicted) > 0.0:
            correlation = float(np.corrcoef(actual, predicted)[0, 1])
    return TagMetrics(mse=mse, r_squared=r_squared, correlation=correlation, n=n)


def evaluate_offline(
    model: PredictorModel,
    frames: Sequence[Frame],
    config: AceConfig,
    raw_frames: Sequence[Frame] | None = None,
) -> tuple[dict[str, TagMetrics], list[tuple[int, str, float, float]]]:
    """Score the model on held-out frames.

    Predictions are aligned to actuals by the prediction length: the row built
    at t is compared against the measurement at t + prediction_length. Returns
    per-tag metrics and the aligned (timestamp, tag, actual, predicted) series
    for plotting.
    """
    if config_fingerprint(config) != model.fingerprint:
        raise FingerprintMismatchError(
            "model feature ordering does not match the active configuration"
        )
    dataset = build_dataset(frames, config, raw_frames=raw_frames)
    metrics: dict[str, TagMetrics] = {}
    aligned: list[tuple[int, str, float, float]] = []
    for tag, z in dataset.targets.items():
        predicted = dataset.features @ model.outputs[tag]
        metrics[tag] = metrics_for(z, predicted)
        for ts, actual_v, pred_v in zip(dataset.target_ts, z, predicted):
            aligned.append((int(ts), tag, float(actual_v), float(pred_v)))
    aligned.sort(key=lambda row: (row[0], row[1]))
    return metrics, aligned


def save_model(model: PredictorModel, path: str) -> None:
    doc = {
        "version": model.version,
        "w": model.w,
        "delta_t": model.delta_t,
        "lambda": model.ridge_lambda,
        "feature_order": list(model.feature_order),
        "outputs": {
            tag: {"coefficients": [float(c) for c in beta]}
            for tag, beta in model.outputs.items()
        },
        "fingerprint": model.fingerprint,
    }
    if model.training_span is not None:
        doc["training_span_ms"] = list(model.training_span)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_model(path: str) -> PredictorModel:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    span = doc.get("training_span_ms")
    return PredictorModel(
        w=int(doc["w"]),
        delta_t=int(doc["delta_t"]),
        ridge_lambda=float(doc["lambda"]),
        feature_order=tuple(doc["feature_order"]),
        outputs={
            tag: np.asarray(entry["coefficients"], dtype=float)
            for tag, entry in doc["outputs"].items()
        },
        fingerprint=str(doc["fingerprint"]),
        training_span=(int(span[0]), int(span[1])) if span else None,
        version=int(doc.get("version", MODEL_FILE_VERSION)),
    )
