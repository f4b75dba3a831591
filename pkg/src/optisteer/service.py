"""Long-running steering service: drives the loop against the plant in auto
or supervised mode and exposes the operator API.

One thread owns the loop and all mutable steering state; HTTP handlers talk
to it only through a command queue (message passing, no shared mutation) and
every console connection receives its own fan-out copy of the event stream.
Survival and safeguard prescriptions are the incumbent protective logic, so
they bypass the supervised approval queue and apply within one step; only
AI-mode prescriptions ever wait for an operator.
"""

from __future__ import annotations

import asyncio
import json
import queue
import threading
import time
from dataclasses import dataclass
from enum import Enum
from typing import Any

from fastapi import FastAPI, WebSocket, WebSocketDisconnect
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from .ace import AceConfig, serialize_ace
from .bus import Bus, TopicPolicy
from .checks import OutlierModel, StreamChecker
from .errors import ModeError, StaleIdError, SteeringError, UnknownIdError
from .harness import one_step_validate, timing_summary
from .loop import SteeringLoop
from .optimizer import ControlMode, Prescription
from .plant import Plant
from .predictor import PredictorModel
from .safeguard import ModeDecision

DEFAULT_APPROVAL_TIMEOUT_MS = 30_000


class SteerMode(str, Enum):
    AUTO = "auto"
    SUPERVISED = "supervised"


class ModeBody(BaseModel):
    mode: str


class DecisionBody(BaseModel):
    decision: str


@dataclass
class StreamEvent:
    seq: int
    kind: str       # frame | prescription | alert | mode_change | decision
    payload: dict

    def to_dict(self) -> dict:
        return {"seq": self.seq, "kind": self.kind, "payload": self.payload}


class SteeringService:
    def __init__(
        self,
        plant: Plant,
        config: AceConfig,
        model: PredictorModel | None,
        outlier_model: OutlierModel,
        mode: SteerMode = SteerMode.AUTO,
        baselines: dict[str, float] | None = None,
        policies: dict[str, TopicPolicy] | None = None,
        bus_seed: int = 0,
        approval_timeout_ms: int = DEFAULT_APPROVAL_TIMEOUT_MS,
        prescribe_deadline_ms: float | None = None,
        audit_path: str | None = None,
        grid_size: int = 11,
        drift_samples: int = 50,
        drift_tolerance: float = 0.5,
    ):
        self.config = config
        self._bus = Bus(seed=bus_seed, policies=policies)
        checker = StreamChecker(
            config,
            outlier_model,
            baselines=baselines,
            drift_samples=drift_samples,
            drift_tolerance=drift_tolerance,
        )
        self._loop = SteeringLoop(
            plant,
            config,
            checker,
            self._bus,
            model,
            grid_size=grid_size,
            apply_policy=self._apply_policy,
        )
        self.mode = mode
        self._pending: dict[str, tuple[Prescription, int]] = {}
        self._approval_timeout_ms = approval_timeout_ms
        self._prescribe_deadline_ms = prescribe_deadline_ms
        self._commands: queue.Queue = queue.Queue()
        self._events: list[StreamEvent] = []
        self._events_lock = threading.Lock()
        self._seq = 0
        self._audit_file = open(audit_path, "a", encoding="utf-8") if audit_path else None
        self._history: list[tuple[str, str, int]] = []
        self._frames = []
        self._prescriptions: list[Prescription] = []
        self._walls: list[float] = []
        self._last_decision: ModeDecision | None = None
        self._last_mode_value: str | None = None
        self._thread: threading.Thread | None = None
        self._stop = threading.Event()

    # --- event fan-out ---

    def _emit(self, kind: str, payload: dict) -> None:
        with self._events_lock:
            self._seq += 1
            event = StreamEvent(seq=self._seq, kind=kind, payload=payload)
            self._events.append(event)
            if self._audit_file is not None:
                self._audit_file.write(json.dumps(event.to_dict(), sort_keys=True) + "\n")
                self._audit_file.flush()

    def events_after(self, seq: int, limit: int = 500) -> list[dict]:
        with self._events_lock:
            return [e.to_dict() for e in self._events if e.seq > seq][:limit]

    # --- loop-side hooks ---

    def _apply_policy(
        self, prescription: Prescription, decision: ModeDecision
    ) -> dict[str, float] | None:
        now = self._loop.plant.state.time_ms
        pending = False
        if prescription.mode is ControlMode.AI and self.mode is SteerMode.SUPERVISED:
            self._pending[prescription.id] = (prescription, now)
            pending = True
        record = prescription.audit_record()
        record["pending"] = pending
        self._emit("prescription", record)
        self._prescriptions.append(prescription)
        if pending:
            return None
        self._history.append((prescription.id, "auto_applied", now))
        self._emit(
            "decision",
            {"ts_ms": now, "id": prescription.id, "decision": "auto_applied"},
        )
        return dict(prescription.controls)

    # --- command handling (drained at each step boundary, loop thread only) ---

    def _handle_set_mode(self, target: SteerMode) -> dict:
        now = self._loop.plant.state.time_ms
        if target is self.mode:
            return {"mode": self.mode.value, "changed": False}
        if target is SteerMode.AUTO:
            for rx_id, (rx, _) in sorted(self._pending.items()):
                self._history.append((rx_id, "rejected", now))
                self._emit(
                    "decision",
                    {"ts_ms": now, "id": rx_id, "decision": "rejected", "reason": "mode_flush"},
                )
            self._pending.clear()
        previous = self.mode
        self.mode = target
        self._emit(
            "mode_change",
            {"ts_ms": now, "from": previous.value, "to": target.value, "steering": True},
        )
        return {"mode": self.mode.value, "changed": True}

    def _handle_decision(self, rx_id: str, decision: str) -> dict:
        now = self._loop.plant.state.time_ms
        if self.mode is not SteerMode.SUPERVISED:
            raise ModeError("decisions are only accepted in supervised mode")
        if rx_id not in self._pending:
            if any(h[0] == rx_id for h in self._history):
                raise StaleIdError(f"prescription {rx_id} already decided or expired")
            raise UnknownIdError(f"unknown prescription id {rx_id}")
        prescription, _ = self._pending.pop(rx_id)
        if decision == "accept":
            self._loop._next_controls = dict(prescription.controls)
            verdict = "accepted"
        else:
            verdict = "rejected"
        self._history.append((rx_id, verdict, now))
        self._emit("decision", {"ts_ms": now, "id": rx_id, "decision": verdict})
        return {"id": rx_id, "decision": verdict}

    def _expire_pending(self) -> None:
        now = self._loop.plant.state.time_ms
        expired = [
            rx_id
            for rx_id, (_, issued) in self._pending.items()
            if now - issued >= self._approval_timeout_ms
        ]
        for rx_id in expired:
            self._pending.pop(rx_id)
            self._history.append((rx_id, "rejected", now))
            self._emit(
                "decision",
                {"ts_ms": now, "id": rx_id, "decision": "rejected", "reason": "expired"},
            )

    def _status(self) -> dict:
        decision = self._last_decision
        return {
            "mode": self.mode.value,
            "step": self._loop.step_count,
            "t_ms": self._loop.plant.state.time_ms,
            "pending": sorted(self._pending),
            "decision": (
                {
                    "mode": decision.mode.value,
                    "triggering_tags": list(decision.triggering_tags),
                    "since_ms": decision.since_ms,
                }
                if decision
                else None
            ),
        }

    def _reports(self) -> dict:
        validation = one_step_validate(self._prescriptions, self._frames, self.config)
        return {
            "validation": validation.to_dict(),
            "latency": self._bus.measure().to_dict(),
            "prescribe_timing": timing_summary(self._walls),
            "history": [
                {"id": h[0], "decision": h[1], "ts_ms": h[2]} for h in self._history[-200:]
            ],
        }

    def _drain_commands(self) -> None:
        while True:
            try:
                kind, payload, reply = self._commands.get_nowait()
            except queue.Empty:
                return
            try:
                if kind == "set_mode":
                    result = self._handle_set_mode(payload)
                elif kind == "decision":
                    result = self._handle_decision(*payload)
                elif kind == "status":
                    result = self._status()
                elif kind == "reports":
                    result = self._reports()
                else:
                    raise SteeringError(f"unknown command {kind!r}")
                reply.put(("ok", result))
            except SteeringError as exc:
                reply.put(("error", exc))

    # --- the loop ---

    def step(self) -> None:
        self._drain_commands()
        self._expire_pending()
        result = self._loop.step()
        self._frames.append(result.check.frame)
        self._emit(
            "frame",
            {
                "ts_ms": result.t_ms,
                "values": dict(result.check.frame.values),
                "provenance": {
                    t: p.value for t, p in result.check.frame.provenance.items()
                },
            },
        )
        for alert in result.check.alerts:
            self._emit("alert", alert)
        if result.decision is not None:
            mode_value = result.decision.mode.value
            if mode_value != self._last_mode_value:
                self._emit(
                    "mode_change",
                    {
                        "ts_ms": result.t_ms,
                        "from": self._last_mode_value,
                        "to": mode_value,
                        "triggering_tags": list(result.decision.triggering_tags),
                    },
                )
                self._last_mode_value = mode_value
            self._last_decision = result.decision
        if result.prescribe_wall_ms is not None:
            self._walls.append(result.prescribe_wall_ms)
            if (
                self._prescribe_deadline_ms is not None
                and result.prescribe_wall_ms > self._prescribe_deadline_ms
            ):
                self._emit(
                    "alert",
                    {
                        "ts_ms": result.t_ms,
                        "kind": "deadline",
                        "tag": None,
                        "detail": (
                            f"prescribe took {result.prescribe_wall_ms:.1f} ms "
                            f"(budget {self._prescribe_deadline_ms:.1f} ms)"
                        ),
                    },
                )

    def run(self, steps: int | None = None, pace_s: float = 0.0) -> None:
        done = 0
        while not self._stop.is_set() and (steps is None or done < steps):
            self.step()
            done += 1
            if pace_s > 0:
                time.sleep(pace_s)

    def start(self, pace_s: float = 0.05) -> None:
        self._thread = threading.Thread(target=self.run, kwargs={"pace_s": pace_s}, daemon=True)
        self._thread.start()

    def stop(self) -> None:
        self._stop.set()
        if self._thread is not None:
            self._thread.join(timeout=5.0)
        if self._audit_file is not None:
            self._audit_file.close()

    # --- thread-safe API entry points ---

    def command(self, kind: str, payload: Any = None, timeout: float = 5.0):
        reply: queue.Queue = queue.Queue()
        self._commands.put((kind, payload, reply))
        status, result = reply.get(timeout=timeout)
        if status == "error":
            raise result
        return result

    def submit_decision(self, rx_id: str, decision: str) -> dict:
        if decision not in ("accept", "reject"):
            raise ModeError(f"decision must be accept or reject, got {decision!r}")
        return self.command("decision", (rx_id, decision))

    def set_mode(self, mode: str) -> dict:
        return self.command("set_mode", SteerMode(mode))

    def status(self) -> dict:
        return self.command("status")

    def reports(self) -> dict:
        return self.command("reports")


def create_app(service: SteeringService, ui_dir: str | None = None) -> FastAPI:
    app = FastAPI(title="optisteer")

    def _error(exc: SteeringError, status: int) -> JSONResponse:
        return JSONResponse(
            status_code=status,
            content={"error": type(exc).__name__, "message": str(exc)},
        )

    @app.get("/status")
    def get_status():
        return service.status()

    @app.get("/config")
    def get_config():
        return json.loads(serialize_ace(service.config))

    @app.get("/reports/latest")
    def get_reports():
        return service.reports()

    @app.post("/mode")
    def post_mode(body: ModeBody):
        try:
            return service.set_mode(body.mode)
        except ValueError:
            return JSONResponse(
                status_code=422,
                content={"error": "ModeError", "message": f"unknown mode {body.mode!r}"},
            )

    @app.post("/prescriptions/{rx_id}/decision")
    def post_decision(rx_id: str, body: DecisionBody):
        try:
            return service.submit_decision(rx_id, body.decision)
        except UnknownIdError as exc:
            return _error(exc, 404)
        except StaleIdError as exc:
            return _error(exc, 409)
        except ModeError as exc:
            return _error(exc, 409)

    @app.websocket("/stream")
    async def stream(ws: WebSocket, since: int = 0):
        await ws.accept()
        last = since
        try:
            while True:
                events = service.events_after(last)
                for event in events:
                    await ws.send_json(event)
                    last = event["seq"]
                if not events:
                    await asyncio.sleep(0.02)
        except WebSocketDisconnect:
            return

    if ui_dir:
        app.mount("/", StaticFiles(directory=ui_dir, html=True), name="console")

    return app
