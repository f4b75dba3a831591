from __future__ import annotations

import time
from pathlib import Path

import pytest
from fastapi.testclient import TestClient

from optisteer import fixtures
from optisteer.errors import ModeError, StaleIdError, UnknownIdError
from optisteer.plant import FaultEvent, FaultKind, FaultScript
from optisteer.service import SteeringService, SteerMode, create_app


def make_service(mill_config, mill_model, mill_outliers, eval_start_ms, mode, script=None, **kwargs):
    plant = fixtures.mill_plant(mill_config, seed=21, start_ms=eval_start_ms)
    if script is not None:
        plant.script = script
    return SteeringService(
        plant,
        mill_config,
        mill_model,
        mill_outliers,
        mode=mode,
        baselines=dict(plant.state.values),
        bus_seed=9,
        **kwargs,
    )


@pytest.fixture
def supervised(mill_config, mill_model, mill_outliers, eval_start_ms):
    service = make_service(mill_config, mill_model, mill_outliers, eval_start_ms, SteerMode.SUPERVISED)
    service.start(pace_s=0.001)
    yield service
    service.stop()


@pytest.fixture
def autosteer(mill_config, mill_model, mill_outliers, eval_start_ms):
    service = make_service(mill_config, mill_model, mill_outliers, eval_start_ms, SteerMode.AUTO)
    service.start(pace_s=0.001)
    yield service
    service.stop()


def wait_for(predicate, timeout=5.0, interval=0.01):
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        value = predicate()
        if value:
            return value
        time.sleep(interval)
    raise AssertionError("condition not reached in time")


def first_pending(service):
    return wait_for(lambda: (service.status()["pending"] or [None])[0])


def feed_value(service):
    events = service.events_after(0, limit=10_000)
    frames = [e for e in events if e["kind"] == "frame"]
    return frames[-1]["payload"]["values"]["feed"] if frames else None


def test_supervised_holds_until_accept(supervised):
    rx_id = first_pending(supervised)
    # several steps with pending decisions: controls still at the start value
    wait_for(lambda: supervised.status()["step"] >= 10)
    assert feed_value(supervised) == 50.0
    events = supervised.events_after(0, limit=10_000)
    pending_rx = [
        e for e in events if e["kind"] == "prescription" and e["payload"]["id"] == rx_id
    ][0]
    accepted_feed = pending_rx["payload"]["controls"]["feed"]
    ack = supervised.submit_decision(rx_id, "accept")
    assert ack == {"id": rx_id, "decision": "accepted"}
    wait_for(lambda: feed_value(supervised) == accepted_feed)


def test_supervised_reject_holds(supervised):
    rx_id = first_pending(supervised)
    ack = supervised.submit_decision(rx_id, "reject")
    assert ack["decision"] == "rejected"
    step_at_reject = supervised.status()["step"]
    wait_for(lambda: supervised.status()["step"] >= step_at_reject + 3)
    assert feed_value(supervised) == 50.0


def test_double_decision_is_stale(supervised):
    rx_id = first_pending(supervised)
    supervised.submit_decision(rx_id, "reject")
    with pytest.raises(StaleIdError):
        supervised.submit_decision(rx_id, "reject")


def test_unknown_id(supervised):
    with pytest.raises(UnknownIdError):
        supervised.submit_decision("rx-999999", "accept")


def test_decisions_rejected_in_auto_mode(autosteer):
    wait_for(lambda: autosteer.status()["step"] >= 2)
    with pytest.raises(ModeError):
        autosteer.submit_decision("rx-000001", "accept")


def test_auto_mode_applies_prescriptions(autosteer):
    wait_for(lambda: autosteer.status()["step"] >= 12)
    assert feed_value(autosteer) != 50.0  # the optimizer moved feed unaided
    assert autosteer.status()["pending"] == []


def test_switch_to_auto_flushes_pending(supervised):
    first_pending(supervised)
    wait_for(lambda: len(supervised.status()["pending"]) >= 2)
    pending = list(supervised.status()["pending"])
    ack = supervised.set_mode("auto")
    assert ack["changed"]
    wait_for(lambda: supervised.status()["pending"] == [])
    events = supervised.events_after(0, limit=10_000)
    rejected = {
        e["payload"]["id"]
        for e in events
        if e["kind"] == "decision" and e["payload"]["decision"] == "rejected"
    }
    assert set(pending) <= rejected
    # no-op switch emits no second steering mode_change
    before = [
        e for e in supervised.events_after(0, limit=10_000)
        if e["kind"] == "mode_change" and e["payload"].get("steering")
    ]
    supervised.set_mode("auto")
    after = [
        e for e in supervised.events_after(0, limit=10_000)
        if e["kind"] == "mode_change" and e["payload"].get("steering")
    ]
    assert len(after) == len(before)


def test_pending_expires_as_rejected(mill_config, mill_model, mill_outliers, eval_start_ms):
    service = make_service(
        mill_config, mill_model, mill_outliers, eval_start_ms,
        SteerMode.SUPERVISED, approval_timeout_ms=3_000,
    )
    service.start(pace_s=0.001)
    try:
        rx_id = first_pending(service)

        def expired():
            events = service.events_after(0, limit=10_000)
            return any(
                e["kind"] == "decision"
                and e["payload"]["id"] == rx_id
                and e["payload"]["decision"] == "rejected"
                and e["payload"].get("reason") == "expired"
                for e in events
            )

        wait_for(expired)
    finally:
        service.stop()


def test_survival_bypasses_approval_queue(mill_config, mill_model, mill_outliers, eval_start_ms):
    drift_t = eval_start_ms + 5_000
    script = FaultScript(
        events=(FaultEvent("vibration", drift_t, drift_t + 200_000, FaultKind.MEAN_DRIFT, 0.2),)
    )
    service = make_service(
        mill_config, mill_model, mill_outliers, eval_start_ms, SteerMode.SUPERVISED, script=script
    )
    service.start(pace_s=0.001)
    try:
        wait_for(
            lambda: (service.status()["decision"] or {}).get("mode") == "survival"
        )
        # survival prescriptions applied with zero operator decisions
        wait_for(lambda: feed_value(service) is not None and feed_value(service) < 50.0)
        events = service.events_after(0, limit=10_000)
        accepted = [
            e for e in events
            if e["kind"] == "decision" and e["payload"]["decision"] == "accepted"
        ]
        assert accepted == []
        survival_rx = [
            e for e in events
            if e["kind"] == "prescription" and e["payload"]["mode"] == "survival"
        ]
        assert survival_rx and not survival_rx[0]["payload"]["pending"]
    finally:
        service.stop()


def test_event_seq_has_no_gaps(supervised):
    wait_for(lambda: supervised.status()["step"] >= 10)
    events = supervised.events_after(0, limit=10_000)
    seqs = [e["seq"] for e in events]
    assert seqs == list(range(seqs[0], seqs[0] + len(seqs)))


# --- HTTP / WebSocket API ---

@pytest.fixture
def api(mill_config, mill_model, mill_outliers, eval_start_ms):
    service = make_service(mill_config, mill_model, mill_outliers, eval_start_ms, SteerMode.SUPERVISED)
    service.start(pace_s=0.001)
    client = TestClient(create_app(service))
    yield client, service
    service.stop()


def test_http_status_and_config(api):
    client, service = api
    status = client.get("/status").json()
    assert status["mode"] == "supervised"
    config_doc = client.get("/config").json()
    assert {t["name"] for t in config_doc["tags"]} == {"feed", "vibration", "pressure", "output"}


def test_http_decision_flow(api):
    client, service = api
    rx_id = first_pending(service)
    response = client.post(f"/prescriptions/{rx_id}/decision", json={"decision": "accept"})
    assert response.status_code == 200
    assert response.json()["decision"] == "accepted"
    stale = client.post(f"/prescriptions/{rx_id}/decision", json={"decision": "accept"})
    assert stale.status_code == 409
    assert stale.json()["error"] == "StaleIdError"
    missing = client.post("/prescriptions/rx-424242/decision", json={"decision": "reject"})
    assert missing.status_code == 404
    assert missing.json()["error"] == "UnknownIdError"


def test_http_mode_switch_and_reports(api):
    client, service = api
    first_pending(service)
    response = client.post("/mode", json={"mode": "auto"})
    assert response.json()["mode"] == "auto"
    reports = client.get("/reports/latest").json()
    assert "validation" in reports and "latency" in reports
    bad = client.post("/mode", json={"mode": "warp"})
    assert bad.status_code == 422


def test_websocket_stream_and_replay(api):
    client, service = api
    wait_for(lambda: service.status()["step"] >= 5)
    with client.websocket_connect("/stream?since=0") as ws:
        first = ws.receive_json()
        second = ws.receive_json()
        assert first["seq"] == 1
        assert second["seq"] == 2
    # reconnect replays strictly after `since`
    with client.websocket_connect(f"/stream?since={second['seq']}") as ws:
        third = ws.receive_json()
        assert third["seq"] == second["seq"] + 1


CONSOLE_DIST = Path(__file__).resolve().parent.parent / "frontend" / "dist"


@pytest.mark.skipif(not CONSOLE_DIST.is_dir(), reason="operator console not built")
def test_serve_ui_hosts_console_assets(mill_config, mill_model, mill_outliers, eval_start_ms):
    service = make_service(mill_config, mill_model, mill_outliers, eval_start_ms, SteerMode.SUPERVISED)
    service.start(pace_s=0.001)
    client = TestClient(create_app(service, ui_dir=str(CONSOLE_DIST)))
    try:
        page = client.get("/")
        assert page.status_code == 200
        assert "optisteer console" in page.text
        script = client.get("/main.js")
        assert script.status_code == 200
        assert "WebSocket" in script.text
        # API routes still win over the static mount
        assert client.get("/status").json()["mode"] == "supervised"
    finally:
        service.stop()
