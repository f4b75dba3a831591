"""Per-step set-point search: score control candidates inside dynamic bounds
through the trained predictor and prescribe the argmin.

The steering objective is weighted squared deviation from each target plus
one-sided quadratic penalties outside constraint bounds; convex on a linear
model, so small grids plus coordinate descent recover the global optimum on
the fixtures and an exhaustive cross-product oracle can certify it.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from enum import Enum

from .ace import AceConfig, TagKind, TagSpec, dynamic_bounds
from .checks import Window
from .errors import EmptyCandidateSetError, KindError, MissingPredictionError
from .predictor import PredictorModel, window_features

DEFAULT_GRID_SIZE = 11
MAX_DESCENT_PASSES = 5
PENALTY_RHO_FACTOR = 10.0


class ControlMode(str, Enum):
    AI = "ai"
    SAFEGUARD = "safeguard"
    SURVIVAL = "survival"


@dataclass(frozen=True)
class ObjectiveTerm:
    tag: str
    weight: float
    target: float


@dataclass(frozen=True)
class ConstraintPenalty:
    tag: str
    rho: float
    lo: float
    hi: float


@dataclass(frozen=True)
class Objective:
    terms: tuple[ObjectiveTerm, ...]
    penalties: tuple[ConstraintPenalty, ...]

    @classmethod
    def from_config(cls, config: AceConfig, rho: float | None = None) -> "Objective":
        terms = tuple(
            ObjectiveTerm(tag=s.name, weight=s.weight, target=s.target)
            for s in config.tags.values()
            if s.kind in (TagKind.OPTIMIZE, TagKind.NORMALIZE)
        )
        if rho is None:
            rho = PENALTY_RHO_FACTOR * max((t.weight for t in terms), default=1.0)
        penalties = tuple(
            ConstraintPenalty(
                tag=s.name, rho=rho, lo=s.static_bounds[0], hi=s.static_bounds[1]
            )
            for s in config.tags.values()
            if s.kind is TagKind.CONSTRAINT and s.static_bounds is not None
        )
        return cls(terms=terms, penalties=penalties)


@dataclass(frozen=True)
class Prescription:
    """One step's suggested set points with how and why they were chosen."""

    id: str
    timestamp_ms: int
    mode: ControlMode
    controls: dict[str, float]
    predicted: dict[str, float]
    objective_value: float | None
    rationale: str

    def audit_record(self) -> dict:
        return {
            "id": self.id,
            "ts_ms": self.timestamp_ms,
            "mode": self.mode.value,
            "controls": dict(self.controls),
            "predicted": dict(self.predicted),
            "objective_value": self.objective_value,
            "rationale": self.rationale,
        }


def score(objective: Objective, predicted: dict[str, float]) -> float:
    """Objective value at a prediction map; summation order is canonicalized
    so tag ordering in the objective can never change the result."""
    total = 0.0
    for term in sorted(objective.terms, key=lambda t: t.tag):
        if term.tag not in predicted:
            raise MissingPredictionError(f"objective tag {term.tag!r} has no prediction")
        dev = predicted[term.tag] - term.target
        total += term.weight * dev * dev
    for pen in sorted(objective.penalties, key=lambda p: p.tag):
        if pen.tag not in predicted:
            raise MissingPredictionError(f"constraint tag {pen.tag!r} has no prediction")
        z = predicted[pen.tag]
        over = max(0.0, z - pen.hi)
        under = max(0.0, pen.lo - z)
        total += pen.rho * over * over + pen.rho * under * under
    return total


def candidates(spec: TagSpec, current: float, n: int = DEFAULT_GRID_SIZE) -> list[float]:
    """Evenly spaced grid over the dynamic bounds, endpoints included, with
    the current value inserted when the grid misses it."""
    if spec.kind is not TagKind.CONTROL:
        raise KindError(f"candidates are only defined for control tags, not {spec.name!r}")
    if n < 2:
        raise EmptyCandidateSetError(f"grid size must be >= 2, got {n}")
    lo, hi = dynamic_bounds(spec, current)
    grid = [lo + (hi - lo) * i / (n - 1) for i in range(n)]
    if current not in grid and lo <= current <= hi:
        grid.append(current)
        grid.sort()
    return grid


class _CandidateScorer:
    """Evaluates control trials against one window without rebuilding features."""

    def __init__(self, model: PredictorModel, window: Window, control_tags: list[str]):
        self._base = window_features(model, window)
        self._slots = {
            tag: model.feature_order.index(f"{tag}@lag0") for tag in control_tags
        }
        self._model = model

    def predict(self, trial: dict[str, float]) -> dict[str, float]:
        x = self._base.copy()
        for tag, value in trial.items():
            x[self._slots[tag]] = value
        return {tag: float(beta @ x) for tag, beta in self._model.outputs.items()}


def _pick(
    scored: list[tuple[float, float]], current: float
) -> tuple[float, float]:
    """Argmin over (candidate, J) pairs; ties go to the smallest move from the
    current value, then to the lower candidate."""
    best_j = min(j for _, j in scored)
    tied = [c for c, j in scored if j == best_j]
    tied.sort(key=lambda c: (abs(c - current), c))
    return tied[0], best_j


MAX_CORNER_START_TAGS = 4


def _descent_starts(
    config: AceConfig, currents: dict[str, float]
) -> list[dict[str, float]]:
    """Deterministic start set: current point, the dynamic-bound corners
    (for few enough tags), and the box center. Axis-aligned sweeps stall in
    tilted objective valleys; spreading starts across the box is what keeps
    the descent matching the exhaustive oracle on coupled objectives."""
    tags = list(currents)
    bounds = {t: dynamic_bounds(config.tags[t], currents[t]) for t in tags}
    starts: list[dict[str, float]] = [dict(currents)]
    if len(tags) <= MAX_CORNER_START_TAGS:
        for combo in itertools.product(*[bounds[t] for t in tags]):
            starts.append(dict(zip(tags, combo)))
    starts.append({t: 0.5 * (bounds[t][0] + bounds[t][1]) for t in tags})
    unique: list[dict[str, float]] = []
    for s in starts:
        if s not in unique:
            unique.append(s)
    return unique


def prescribe(
    model: PredictorModel,
    window: Window,
    config: AceConfig,
    objective: Objective,
    grid_size: int = DEFAULT_GRID_SIZE,
    max_passes: int = MAX_DESCENT_PASSES,
    prescription_id: str | None = None,
) -> Prescription:
    """Grid search (single control tag) or multi-start coordinate descent
    over per-tag grids (multiple tags) for the lowest-objective admissible
    set points.

    Each descent sweeps the tags in declared order, taking the per-tag grid
    argmin while holding the others, until a pass moves nothing or the pass
    cap is hit. Ties go to the smallest move from the current value, then to
    the lower value; the same rule picks among the per-start results, so the
    outcome never depends on evaluation order and candidate scoring may run
    concurrently.
    """
    control_tags = config.control_tags
    if not control_tags:
        raise EmptyCandidateSetError("configuration declares no control tags")
    currents = {tag: window.latest(tag) for tag in control_tags}
    grids = {
        tag: candidates(config.tags[tag], currents[tag], grid_size) for tag in control_tags
    }
    scorer = _CandidateScorer(model, window, control_tags)

    def objective_at(point: dict[str, float]) -> float:
        return score(objective, scorer.predict(point))

    def descend(start: dict[str, float]) -> tuple[dict[str, float], float]:
        trial = dict(start)
        for _ in range(max_passes):
            moved = False
            for tag in control_tags:
                scored = []
                for cand in grids[tag]:
                    probe = dict(trial)
                    probe[tag] = cand
                    scored.append((cand, objective_at(probe)))
                best, _ = _pick(scored, currents[tag])
                if best != trial[tag]:
                    trial[tag] = best
                    moved = True
            if not moved or len(control_tags) == 1:
                break
        return trial, objective_at(trial)

    starts = (
        [dict(currents)] if len(control_tags) == 1 else _descent_starts(config, currents)
    )
    outcomes = [descend(start) for start in starts]
    best_j = min(j for _, j in outcomes)
    tied = [t for t, j in outcomes if j == best_j]
    tied.sort(
        key=lambda t: (
            sum(abs(t[tag] - currents[tag]) for tag in control_tags),
            tuple(t[tag] for tag in control_tags),
        )
    )
    trial = tied[0]

    predicted = scorer.predict(trial)
    j = score(objective, predicted)
    end_ms = window.end_ms
    moves = ", ".join(
        f"{tag} {currents[tag]:g}->{trial[tag]:g}" for tag in control_tags
    )
    return Prescription(
        id=prescription_id if prescription_id is not None else f"rx-{end_ms}",
        timestamp_ms=end_ms,
        mode=ControlMode.AI,
        controls=trial,
        predicted=predicted,
        objective_value=j,
        rationale=f"grid argmin J={j:.6g} ({moves})",
    )
