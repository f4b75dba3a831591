"""Coexistence layer: decides per step whether the AI, the rule-based
safeguard, or survival logic owns the plant, and produces the rule-based
prescriptions when the AI is not in charge.

Precedence is total: survival whenever any constraint sits strictly above its
survival threshold, else safeguard whenever routing came back out of bounds,
else AI. Arbitration is a hard take-over, never a blend.
"""

from __future__ import annotations

from dataclasses import dataclass

from .ace import AceConfig, RelationSign, TagKind, dynamic_bounds, related_controls
from .checks import RoutingDecision, Window
from .errors import ModeMismatchError
from .optimizer import ControlMode, Prescription


@dataclass(frozen=True)
class ModeDecision:
    mode: ControlMode
    triggering_tags: tuple[str, ...]
    since_ms: int


def decide(window: Window, routing: RoutingDecision, config: AceConfig) -> ModeDecision:
    """Survival beats safeguard beats AI; triggering tags are empty iff AI."""
    survival_tags = tuple(
        name
        for name, spec in config.tags.items()
        if spec.kind is TagKind.CONSTRAINT
        and spec.survival_threshold is not None
        and window.latest(name) > spec.survival_threshold
    )
    if survival_tags:
        return ModeDecision(
            mode=ControlMode.SURVIVAL, triggering_tags=survival_tags, since_ms=window.end_ms
        )
    if not routing.in_bounds:
        return ModeDecision(
            mode=ControlMode.SAFEGUARD, triggering_tags=routing.tags, since_ms=window.end_ms
        )
    return ModeDecision(mode=ControlMode.AI, triggering_tags=(), since_ms=window.end_ms)


def _violation_side(window: Window, tag: str, config: AceConfig) -> str | None:
    """'above' / 'below' when the latest value breaks the static bounds, or
    'above' for a survival-threshold crossing; None when only the window vote
    failed (no defined correction direction for a broken sensor)."""
    spec = config.tags[tag]
    value = window.latest(tag)
    if spec.static_bounds is not None:
        lo, hi = spec.static_bounds
        if value > hi:
            return "above"
        if value < lo:
            return "below"
    if spec.survival_threshold is not None and value > spec.survival_threshold:
        return "above"
    return None


def safeguard_prescription(
    window: Window,
    decision: ModeDecision,
    config: AceConfig,
    prescription_id: str | None = None,
) -> tuple[Prescription, list[dict]]:
    """Rule-based correction for a non-AI step.

    Direction comes from the declared relation sign and the violation side:
    above an upper limit, a positively related control drops and a negatively
    related one rises; mirrored below a lower limit. Survival pins the control
    at the alleviating dynamic bound endpoint; safeguard moves it by exactly
    one max_step (the same endpoint whenever static bounds do not clip).
    Unstable-only triggers and triggering tags with no related control leave
    every control held; the latter also raises a no-relation alert.
    """
    assert decision.mode is not ControlMode.AI
    end_ms = window.end_ms
    currents = {tag: window.latest(tag) for tag in config.control_tags}
    targets: dict[str, float] = {}
    conflicted: set[str] = set()
    alerts: list[dict] = []
    notes: list[str] = []

    for trig in decision.triggering_tags:
        side = _violation_side(window, trig, config)
        if side is None:
            notes.append(f"{trig} unstable: hold")
            continue
        relations = related_controls(config, trig)
        if not relations:
            alerts.append(
                {
                    "ts_ms": end_ms,
                    "kind": "no_relation",
                    "tag": trig,
                    "detail": f"violation ({side}) has no related control tag; holding",
                }
            )
            notes.append(f"{trig} {side}: no related control")
            continue
        for rel in relations:
            decrease = (side == "above") == (rel.sign is RelationSign.POSITIVE)
            spec = config.tags[rel.cause]
            current = currents[rel.cause]
            dyn_lo, dyn_hi = dynamic_bounds(spec, current)
            if decision.mode is ControlMode.SURVIVAL:
                value = dyn_lo if decrease else dyn_hi
            else:
                value = current - spec.max_step if decrease else current + spec.max_step
                if spec.static_bounds is not None:
                    s_lo, s_hi = spec.static_bounds
                    value = min(max(value, s_lo), s_hi)
            previous = targets.get(rel.cause)
            if previous is not None and previous != value:
                conflicted.add(rel.cause)
            targets[rel.cause] = value
            notes.append(
                f"{trig} {side} -> {rel.cause} {'down' if decrease else 'up'}"
            )

    controls = dict(currents)
    for tag, value in targets.items():
        if tag in conflicted:
            notes.append(f"{tag}: conflicting corrections, holding")
            continue
        controls[tag] = value

    label = decision.mode.value
    rationale = f"{label}: " + ("; ".join(notes) if notes else "no triggering tags")
    prescription = Prescription(
        id=prescription_id if prescription_id is not None else f"rx-{end_ms}",
        timestamp_ms=end_ms,
        mode=decision.mode,
        controls=controls,
        predicted={},
        objective_value=None,
        rationale=rationale,
    )
    return prescription, alerts


def arbitrate(
    ai: Prescription | None,
    fallback: Prescription | None,
    decision: ModeDecision,
) -> Prescription:
    """Return the prescription matching the decided mode; never blend."""
    if decision.mode is ControlMode.AI:
        if ai is None or ai.mode is not ControlMode.AI:
            raise ModeMismatchError("AI mode decided but no AI prescription supplied")
        return ai
    if fallback is None or fallback.mode is not decision.mode:
        raise ModeMismatchError(
            f"{decision.mode.value} mode decided but fallback prescription "
            f"is {fallback.mode.value if fallback else 'missing'}"
        )
    return fallback
