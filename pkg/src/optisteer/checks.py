"""Streaming data validation: outlier fencing, broken-sensor window voting,
zero-order-hold interpolation, drift monitoring, and in/out-of-bounds routing.

Ordering matters and is fixed here: per grid step the pipeline interpolates,
pads outliers for the values handed to the predictor, votes stability on the
raw (pre-padding) values, checks drift on the raw values, then routes.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from .ace import AceConfig
from .errors import InsufficientDataError


@dataclass(frozen=True)
class Sample:
    timestamp_ms: int
    tag: str
    value: float


class Provenance(str, Enum):
    MEASURED = "measured"
    HELD = "held"
    PADDED_OUTLIER = "padded_outlier"


@dataclass(frozen=True)
class Frame:
    """All declared tags resolved onto one common-grid timestamp."""

    timestamp_ms: int
    values: dict[str, float]
    provenance: dict[str, Provenance]


@dataclass(frozen=True)
class Window:
    """The last w frames plus per-tag stability verdicts.

    Frame values are post-padding (what inference sees); the stability vote
    and invalid fractions were taken on the raw pre-padding values.
    """

    frames: tuple[Frame, ...]
    stability: dict[str, bool]          # True = stable
    invalid_fraction: dict[str, Fraction]

    @property
    def end_ms(self) -> int:
        return self.frames[-1].timestamp_ms

    def latest(self, tag: str) -> float:
        return self.frames[-1].values[tag]

    def series(self, tag: str) -> list[float]:
        return [f.values[tag] for f in self.frames]

    def all_stable(self) -> bool:
        return all(self.stability.values())


@dataclass(frozen=True)
class TagFence:
    d10: float
    d90: float
    lo: float
    hi: float

    def contains(self, value: float) -> bool:
        return self.lo <= value <= self.hi

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.lo + self.hi)


@dataclass(frozen=True)
class OutlierModel:
    """Per-tag interdecile fences: [d10 - k*(d90-d10), d90 + k*(d90-d10)]."""

    k: float
    fences: dict[str, TagFence]

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "tags": {
                tag: {"d10": f.d10, "d90": f.d90, "fence": [f.lo, f.hi]}
                for tag, f in sorted(self.fences.items())
            },
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "OutlierModel":
        fences = {
            tag: TagFence(
                d10=float(entry["d10"]),
                d90=float(entry["d90"]),
                lo=float(entry["fence"][0]),
                hi=float(entry["fence"][1]),
            )
            for tag, entry in doc["tags"].items()
        }
        return cls(k=float(doc["k"]), fences=fences)


@dataclass(frozen=True)
class DriftReport:
    tag: str
    train_d10: float
    train_d90: float
    live_d10: float
    live_d90: float
    shift: float
    flagged: bool


class RoutingKind(str, Enum):
    IN_BOUNDS = "in_bounds"
    OUT_OF_BOUNDS = "out_of_bounds"


@dataclass(frozen=True)
class RoutingDecision:
    kind: RoutingKind
    tags: tuple[str, ...] = ()
    # why each listed tag was routed out: "bounds", "unstable", or "bounds+unstable"
    reasons: dict[str, str] = field(default_factory=dict)

    @property
    def in_bounds(self) -> bool:
        return self.kind is RoutingKind.IN_BOUNDS


MIN_FIT_SAMPLES = 10
DRIFT_EPS = 1e-9


def _deciles(values: Sequence[float]) -> tuple[float, float]:
    arr = np.asarray(values, dtype=float)
    d10, d90 = np.percentile(arr, [10.0, 90.0], method="linear")
    return float(d10), float(d90)


def fit_outlier_model(training: dict[str, Sequence[float]], k: float) -> OutlierModel:
    """Empirical 10th/90th percentiles per tag, widened by k interdecile ranges.

    k = 0 reproduces the over-tight fence that removes genuine values after a
    distribution shift; that failure mode is pinned in the regression tests.
    """
    fences: dict[str, TagFence] = {}
    for tag, values in training.items():
        finite = [v for v in values if np.isfinite(v)]
        if len(finite) < MIN_FIT_SAMPLES:
            raise InsufficientDataError(
                f"tag {tag!r}: need >= {MIN_FIT_SAMPLES} finite values, got {len(finite)}"
            )
        d10, d90 = _deciles(finite)
        idr = d90 - d10
        fences[tag] = TagFence(d10=d10, d90=d90, lo=d10 - k * idr, hi=d90 + k * idr)
    return OutlierModel(k=k, fences=fences)


class OutlierPadder:
    """Stateful last-normal-value padding for one stream of mixed tags.

    Values outside a tag's fence are replaced by the most recent in-fence
    value for that tag; if the stream opens with an outlier, the fence
    midpoint seeds the cache.
    """

    def __init__(self, model: OutlierModel):
        self._model = model
        self._last_good: dict[str, float] = {}

    def apply(self, tag: str, value: float) -> tuple[float, bool]:
        fence = self._model.fences.get(tag)
        if fence is None:
            return value, False
        if fence.contains(value):
            self._last_good[tag] = value
            return value, False
        pad = self._last_good.get(tag)
        if pad is None:
            pad = fence.midpoint
            self._last_good[tag] = pad
        return pad, True


def remove_outliers(
    series: Sequence[Sample], model: OutlierModel
) -> tuple[list[Sample], list[bool]]:
    """Pad out-of-fence values with the last normal value per tag.

    Returns the cleaned sequence (same length) and a replacement mask.
    Idempotent: every cleaned value lies inside its fence.
    """
    padder = OutlierPadder(model)
    cleaned: list[Sample] = []
    mask: list[bool] = []
    for sample in series:
        value, padded = padder.apply(sample.tag, sample.value)
        cleaned.append(
            sample if not padded else Sample(sample.timestamp_ms, sample.tag, value)
        )
        mask.append(padded)
    return cleaned, mask


def outlier_alert(mask: Sequence[bool], alert_fraction: float) -> Fraction | None:
    """Flagged fraction when it strictly exceeds the alert fraction, else None."""
    if not mask:
        raise InsufficientDataError("outlier alert needs a non-empty window")
    flagged = Fraction(sum(1 for m in mask if m), len(mask))
    return flagged if flagged > Fraction(alert_fraction) else None


def check_window_stability(
    values: Sequence[float],
    broken_bounds: tuple[float, float],
    limit: float,
) -> tuple[bool, Fraction]:
    """Majority vote on broken-sensor membership over one window.

    A point is valid when lo <= value <= hi (endpoints inclusive). The window
    is unstable when the invalid fraction strictly exceeds the limit — "more
    than" the limit, so exactly 25% of 12 stays stable. Exact rational
    arithmetic; no float rounding at the boundary.
    """
    if not values:
        raise InsufficientDataError("stability vote needs a non-empty window")
    lo, hi = broken_bounds
    invalid = sum(1 for v in values if not (lo <= v <= hi))
    fraction = Fraction(invalid, len(values))
    stable = not fraction > Fraction(limit)
    return stable, fraction


def interpolate(
    samples: Iterable[Sample],
    tags: Sequence[str],
    period_ms: int,
    start_ms: int | None = None,
    end_ms: int | None = None,
    baselines: dict[str, float] | None = None,
) -> list[Frame]:
    """Zero-order hold onto the common grid.

    Each grid timestamp takes the latest sample with timestamp <= the grid
    point; provenance is MEASURED only when a sample lands exactly on the
    grid point. Tags with no sample yet hold their configured baseline.
    """
    by_tag: dict[str, list[Sample]] = {t: [] for t in tags}
    for s in samples:
        if s.tag in by_tag:
            by_tag[s.tag].append(s)
    for seq in by_tag.values():
        seq.sort(key=lambda s: s.timestamp_ms)
    all_ts = [s.timestamp_ms for seq in by_tag.values() for s in seq]
    if not all_ts and (start_ms is None or end_ms is None):
        return []
    if start_ms is None:
        start_ms = -(-min(all_ts) // period_ms) * period_ms  # ceil to grid
    if end_ms is None:
        end_ms = (max(all_ts) // period_ms) * period_ms

    frames: list[Frame] = []
    cursor = {t: 0 for t in tags}
    held: dict[str, tuple[float, int | None]] = {
        t: ((baselines or {}).get(t, 0.0), None) for t in tags
    }
    t_ms = start_ms
    while t_ms <= end_ms:
        values: dict[str, float] = {}
        provenance: dict[str, Provenance] = {}
        for tag in tags:
            seq = by_tag[tag]
            i = cursor[tag]
            while i < len(seq) and seq[i].timestamp_ms <= t_ms:
                held[tag] = (seq[i].value, seq[i].timestamp_ms)
                i += 1
            cursor[tag] = i
            value, sample_ts = held[tag]
            values[tag] = value
            provenance[tag] = Provenance.MEASURED if sample_ts == t_ms else Provenance.HELD
        frames.append(Frame(timestamp_ms=t_ms, values=values, provenance=provenance))
        t_ms += period_ms
    return frames


def drift_check(
    live: Sequence[float],
    tag: str,
    model: OutlierModel,
    tolerance: float,
) -> DriftReport:
    """Compare live deciles against the training deciles for one tag.

    shift = max(|d10 change|, |d90 change|) normalized by the training
    interdecile range; flagged when it strictly exceeds the tolerance.
    """
    if len(live) < MIN_FIT_SAMPLES:
        raise InsufficientDataError(
            f"drift check needs >= {MIN_FIT_SAMPLES} live values, got {len(live)}"
        )
    fence = model.fences[tag]
    live_d10, live_d90 = _deciles(live)
    span = fence.d90 - fence.d10 + DRIFT_EPS
    shift = max(abs(live_d10 - fence.d10), abs(live_d90 - fence.d90)) / span
    return DriftReport(
        tag=tag,
        train_d10=fence.d10,
        train_d90=fence.d90,
        live_d10=live_d10,
        live_d90=live_d90,
        shift=shift,
        flagged=shift > tolerance,
    )


def route(window: Window, config: AceConfig) -> RoutingDecision:
    """Fig-2 style gate: AI inference only when every tag is in bounds and stable.

    A tag routes out when its latest frame value violates its static bounds
    or its window vote came back unstable.
    """
    reasons: dict[str, str] = {}
    for name, spec in config.tags.items():
        parts = []
        if spec.static_bounds is not None:
            lo, hi = spec.static_bounds
            v = window.latest(name)
            if v < lo or v > hi:
                parts.append("bounds")
        if not window.stability.get(name, True):
            parts.append("unstable")
        if parts:
            reasons[name] = "+".join(parts)
    if not reasons:
        return RoutingDecision(kind=RoutingKind.IN_BOUNDS)
    return RoutingDecision(
        kind=RoutingKind.OUT_OF_BOUNDS, tags=tuple(reasons), reasons=reasons
    )


@dataclass
class StepCheck:
    """Everything the validators produced for one grid timestamp."""

    raw_frame: Frame
    frame: Frame
    window: Window | None
    routing: RoutingDecision | None
    drift: list[DriftReport]
    alerts: list[dict]


class StreamChecker:
    """Per-step validator stack over a live sample stream.

    Feed delivered samples with offer(); call tick(t) at each grid timestamp
    to assemble the frame and run the full check sequence. The same code path
    serves batch replay, so offline and online runs cannot diverge.
    """

    def __init__(
        self,
        config: AceConfig,
        outlier_model: OutlierModel,
        baselines: dict[str, float] | None = None,
        drift_samples: int = 50,
        drift_tolerance: float = 0.5,
    ):
        self.config = config
        self.outlier_model = outlier_model
        self.baselines = dict(baselines or {})
        self.drift_samples = drift_samples
        self.drift_tolerance = drift_tolerance
        self._padder = OutlierPadder(outlier_model)
        self._cache: dict[str, Sample] = {}
        w = config.window_size
        self._raw_frames: deque[Frame] = deque(maxlen=w)
        self._frames: deque[Frame] = deque(maxlen=w)
        self._masks: dict[str, deque[bool]] = {t: deque(maxlen=w) for t in config.tags}
        self._drift_ring: dict[str, deque[float]] = {
            t: deque(maxlen=drift_samples) for t in config.tags
        }
        self._drift_flagged: dict[str, bool] = {t: False for t in config.tags}

    def offer(self, sample: Sample) -> None:
        """Accept a delivered sample; late arrivals never roll the cache back."""
        current = self._cache.get(sample.tag)
        if current is None or sample.timestamp_ms >= current.timestamp_ms:
            self._cache[sample.tag] = sample

    def tick(self, t_ms: int) -> StepCheck:
        raw_values: dict[str, float] = {}
        clean_values: dict[str, float] = {}
        raw_prov: dict[str, Provenance] = {}
        clean_prov: dict[str, Provenance] = {}
        alerts: list[dict] = []

        for tag in self.config.tags:
            cached = self._cache.get(tag)
            if cached is None:
                raw = self.baselines.get(tag, 0.0)
                prov = Provenance.HELD
            else:
                raw = cached.value
                prov = (
                    Provenance.MEASURED
                    if cached.timestamp_ms == t_ms
                    else Provenance.HELD
                )
            raw_values[tag] = raw
            raw_prov[tag] = prov
            # drift watches the raw stream: padding must not mask a shift
            self._drift_ring[tag].append(raw)
            value, padded = self._padder.apply(tag, raw)
            clean_values[tag] = value
            clean_prov[tag] = Provenance.PADDED_OUTLIER if padded else prov
            self._masks[tag].append(padded)

        raw_frame = Frame(timestamp_ms=t_ms, values=raw_values, provenance=raw_prov)
        frame = Frame(timestamp_ms=t_ms, values=clean_values, provenance=clean_prov)
        self._raw_frames.append(raw_frame)
        self._frames.append(frame)

        window: Window | None = None
        routing: RoutingDecision | None = None
        if len(self._frames) == self.config.window_size:
            stability: dict[str, bool] = {}
            invalid: dict[str, Fraction] = {}
            for tag, spec in self.config.tags.items():
                if spec.broken_sensor_bounds is None:
                    stability[tag] = True
                    invalid[tag] = Fraction(0, 1)
                    continue
                raw_series = [f.values[tag] for f in self._raw_frames]
                stable, fraction = check_window_stability(
                    raw_series, spec.broken_sensor_bounds, self.config.broken_fraction_limit
                )
                stability[tag] = stable
                invalid[tag] = fraction
                if not stable:
                    alerts.append(
                        {
                            "ts_ms": t_ms,
                            "kind": "unstable_window",
                            "tag": tag,
                            "detail": f"invalid_fraction={float(fraction):.4f}",
                        }
                    )
            window = Window(
                frames=tuple(self._frames), stability=stability, invalid_fraction=invalid
            )
            routing = route(window, self.config)
            if not routing.in_bounds:
                for tag in routing.tags:
                    alerts.append(
                        {
                            "ts_ms": t_ms,
                            "kind": "out_of_bounds",
                            "tag": tag,
                            "detail": routing.reasons[tag],
                        }
                    )
            for tag in self.config.tags:
                rate = outlier_alert(self._masks[tag], self.config.outlier_alert_fraction)
                if rate is not None:
                    alerts.append(
                        {
                            "ts_ms": t_ms,
                            "kind": "outlier_rate",
                            "tag": tag,
                            "detail": f"padded_fraction={float(rate):.4f}",
                        }
                    )

        drift_reports: list[DriftReport] = []
        for tag in self.config.tags:
            ring = self._drift_ring[tag]
            if tag not in self.outlier_model.fences:
                continue
            if len(ring) < max(MIN_FIT_SAMPLES, self.drift_samples):
                continue
            report = drift_check(list(ring), tag, self.outlier_model, self.drift_tolerance)
            drift_reports.append(report)
            if report.flagged and not self._drift_flagged[tag]:
                alerts.append(
                    {
                        "ts_ms": t_ms,
                        "kind": "drift",
                        "tag": tag,
                        "detail": f"decile_shift={report.shift:.4f}",
                    }
                )
            self._drift_flagged[tag] = report.flagged

        return StepCheck(
            raw_frame=raw_frame,
            frame=frame,
            window=window,
            routing=routing,
            drift=drift_reports,
            alerts=alerts,
        )
