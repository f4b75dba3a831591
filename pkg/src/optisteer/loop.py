"""Single-threaded steering loop: plant -> bus -> checks -> predict ->
prescribe -> arbitrate -> apply, one grid step at a time.

The harness and the long-running service both drive this loop; the only
difference is the control-application policy (auto-apply versus the
supervised approval queue), injected as a hook.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable

from .ace import AceConfig
from .bus import Bus, BusMessage
from .checks import StepCheck, StreamChecker
from .errors import FingerprintMismatchError, UnstableWindowError
from .optimizer import ControlMode, Objective, Prescription, prescribe
from .plant import Plant
from .predictor import PredictorModel, config_fingerprint, predict
from .safeguard import ModeDecision, arbitrate, decide, safeguard_prescription


def topic_for(tag: str) -> str:
    return f"tag.{tag}"


@dataclass
class StepResult:
    step: int
    t_ms: int
    check: StepCheck
    decision: ModeDecision | None
    prescription: Prescription | None
    applied_controls: dict[str, float]
    predicted_ahead: dict[str, float] | None  # keyed prediction for t + delta_t
    prescribe_wall_ms: float | None
    delivered: list[BusMessage] = field(default_factory=list)


class SteeringLoop:
    """Owns plant state and the per-step pipeline; strictly sequential."""

    def __init__(
        self,
        plant: Plant,
        config: AceConfig,
        checker: StreamChecker,
        bus: Bus,
        model: PredictorModel | None,
        objective: Objective | None = None,
        grid_size: int = 11,
        apply_policy: Callable[[Prescription, ModeDecision], dict[str, float] | None]
        | None = None,
    ):
        if model is not None and config_fingerprint(config) != model.fingerprint:
            raise FingerprintMismatchError(
                "model feature ordering does not match the active configuration"
            )
        self.plant = plant
        self.config = config
        self.checker = checker
        self.bus = bus
        self.model = model
        self.objective = objective or Objective.from_config(config)
        self.grid_size = grid_size
        self.apply_policy = apply_policy
        self.step_count = 0
        self.last_mode: ControlMode | None = None
        self._next_controls: dict[str, float] = dict(plant.state.controls)
        self._subs = {tag: bus.subscribe(topic_for(tag)) for tag in config.tags}
        self._rx_counter = 0

    def _next_id(self) -> str:
        self._rx_counter += 1
        return f"rx-{self._rx_counter:06d}"

    def step(self) -> StepResult:
        samples = self.plant.advance(dict(self._next_controls))
        t_ms = self.plant.state.time_ms
        for sample in samples:
            self.bus.publish(topic_for(sample.tag), sample, published_at_ms=sample.timestamp_ms)
        self.bus.advance_to(t_ms)

        delivered: list[BusMessage] = []
        for sub in self._subs.values():
            delivered.extend(sub.drain())
        delivered.sort(key=lambda m: (m.delivered_at_ms, m.sample.timestamp_ms, m.topic))
        for message in delivered:
            self.checker.offer(message.sample)

        check = self.checker.tick(t_ms)
        decision: ModeDecision | None = None
        prescription: Prescription | None = None
        predicted_ahead: dict[str, float] | None = None
        prescribe_wall: float | None = None

        if check.window is not None and check.routing is not None:
            window = check.window
            decision = decide(window, check.routing, self.config)
            if self.model is not None and window.all_stable():
                # prediction for metrics is recorded on every stable window,
                # whatever mode ends up in charge of the controls
                try:
                    predicted_ahead = predict(self.model, window)
                except UnstableWindowError:
                    predicted_ahead = None
            ai_rx: Prescription | None = None
            fallback: Prescription | None = None
            if decision.mode is ControlMode.AI and self.model is not None:
                started = time.perf_counter()
                ai_rx = prescribe(
                    self.model,
                    window,
                    self.config,
                    self.objective,
                    grid_size=self.grid_size,
                    prescription_id=self._next_id(),
                )
                prescribe_wall = (time.perf_counter() - started) * 1000.0
            elif decision.mode is not ControlMode.AI:
                fallback, extra_alerts = safeguard_prescription(
                    window, decision, self.config, prescription_id=self._next_id()
                )
                check.alerts.extend(extra_alerts)
            if decision.mode is ControlMode.AI and ai_rx is None:
                # no trained model on board: hold current set points
                prescription = None
            else:
                prescription = arbitrate(ai_rx, fallback, decision)

            if prescription is not None:
                applied = (
                    self.apply_policy(prescription, decision)
                    if self.apply_policy is not None
                    else dict(prescription.controls)
                )
                if applied is not None:
                    self._next_controls = dict(applied)

        self.step_count += 1
        return StepResult(
            step=self.step_count,
            t_ms=t_ms,
            check=check,
            decision=decision,
            prescription=prescription,
            applied_controls=dict(self._next_controls),
            predicted_ahead=predicted_ahead,
            prescribe_wall_ms=prescribe_wall,
            delivered=delivered,
        )

    def run(self, steps: int) -> list[StepResult]:
        return [self.step() for _ in range(steps)]
