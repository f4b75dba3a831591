"""Publish-subscribe bus with injectable per-topic latency, jitter, and loss.

Runs on a virtual clock decoupled from wall time so hours of traffic replay
in milliseconds. Delivery decisions (drop or not, delivered-at stamp) are
drawn from per-topic seeded streams at publish time, which makes runs
reproducible and lets the in-process and TCP transports agree bit-for-bit:
the socket only ferries payloads, it never re-rolls the dice.
"""

from __future__ import annotations

import heapq
import json
import random
import socket
import socketserver
import threading
from dataclasses import dataclass

import numpy as np

from .checks import Sample
from .errors import BusClosedError


@dataclass(frozen=True)
class TopicPolicy:
    base_latency_ms: float = 0.0
    jitter_ms: float = 0.0
    loss_probability: float = 0.0

    def __post_init__(self):
        if self.base_latency_ms < 0 or self.jitter_ms < 0:
            raise ValueError("latency and jitter must be non-negative")
        if not 0.0 <= self.loss_probability <= 1.0:
            raise ValueError("loss probability must lie in [0, 1]")


IDENTITY_POLICY = TopicPolicy()


@dataclass(frozen=True)
class BusMessage:
    topic: str
    sample: Sample
    published_at_ms: float
    delivered_at_ms: float | None  # None while lost messages sit in the ledger

    @property
    def latency_ms(self) -> float | None:
        if self.delivered_at_ms is None:
            return None
        return self.delivered_at_ms - self.published_at_ms


@dataclass(frozen=True)
class TopicStats:
    published: int
    delivered: int
    lost: int
    mean_ms: float | None
    min_ms: float | None
    max_ms: float | None
    p95_ms: float | None


@dataclass(frozen=True)
class LatencyReport:
    per_topic: dict[str, TopicStats]

    def to_dict(self) -> dict:
        return {
            topic: {
                "published": s.published,
                "delivered": s.delivered,
                "lost": s.lost,
                "mean_ms": s.mean_ms,
                "min_ms": s.min_ms,
                "max_ms": s.max_ms,
                "p95_ms": s.p95_ms,
            }
            for topic, s in sorted(self.per_topic.items())
        }


class Subscription:
    """Single-consumer ordered stream of delivered messages for one topic."""

    def __init__(self, topic: str):
        self.topic = topic
        self._ready: list[BusMessage] = []

    def _push(self, message: BusMessage) -> None:
        self._ready.append(message)

    def drain(self) -> list[BusMessage]:
        out, self._ready = self._ready, []
        return out


class Bus:
    """In-process pub-sub core; scheduling is serialized under one lock.

    Messages are scheduled at publish time and dispatched in delivered-at
    order (publish order only breaks ties) whenever the virtual clock
    advances. The loss/jitter stream for each topic is seeded independently
    so interleaving across topics cannot change any topic's decisions.
    """

    def __init__(self, seed: int = 0, policies: dict[str, TopicPolicy] | None = None):
        self._seed = seed
        self._policies = dict(policies or {})
        self._rngs: dict[str, random.Random] = {}
        self._now_ms: float = 0.0
        self._heap: list[tuple[float, int, BusMessage]] = []
        self._seq = 0
        self._ledger: list[BusMessage] = []
        self._subs: dict[str, list[Subscription]] = {}
        self._closed = False
        self._lock = threading.Lock()

    def policy_for(self, topic: str) -> TopicPolicy:
        return self._policies.get(topic, IDENTITY_POLICY)

    def set_policy(self, topic: str, policy: TopicPolicy) -> None:
        with self._lock:
            self._policies[topic] = policy

    def _rng(self, topic: str) -> random.Random:
        rng = self._rngs.get(topic)
        if rng is None:
            rng = random.Random(f"{self._seed}|{topic}")
            self._rngs[topic] = rng
        return rng

    @property
    def now_ms(self) -> float:
        return self._now_ms

    def publish(self, topic: str, sample: Sample, published_at_ms: float | None = None) -> bool:
        """Schedule (or drop) one message; returns True when it will deliver."""
        with self._lock:
            if self._closed:
                raise BusClosedError("publish on a closed bus")
            published = self._now_ms if published_at_ms is None else float(published_at_ms)
            policy = self.policy_for(topic)
            rng = self._rng(topic)
            if rng.random() < policy.loss_probability:
                self._ledger.append(
                    BusMessage(topic, sample, published, delivered_at_ms=None)
                )
                return False
            jitter = rng.uniform(-policy.jitter_ms, policy.jitter_ms) if policy.jitter_ms else 0.0
            delivered = max(published, published + policy.base_latency_ms + jitter)
            message = BusMessage(topic, sample, published, delivered_at_ms=delivered)
            self._ledger.append(message)
            self._seq += 1
            heapq.heappush(self._heap, (delivered, self._seq, message))
            return True

    def subscribe(self, topic: str) -> Subscription:
        with self._lock:
            if self._closed:
                raise BusClosedError("subscribe on a closed bus")
            sub = Subscription(topic)
            self._subs.setdefault(topic, []).append(sub)
            return sub

    def advance_to(self, t_ms: float) -> list[BusMessage]:
        """Move the virtual clock forward and dispatch everything due."""
        dispatched: list[BusMessage] = []
        with self._lock:
            self._now_ms = max(self._now_ms, float(t_ms))
            while self._heap and self._heap[0][0] <= self._now_ms:
                _, _, message = heapq.heappop(self._heap)
                dispatched.append(message)
                for sub in self._subs.get(message.topic, []):
                    sub._push(message)
        return dispatched

    def measure(self, window_ms: float | None = None) -> LatencyReport:
        """Latency statistics over messages published inside the window
        (the trailing window_ms, or the whole run when omitted)."""
        with self._lock:
            lo = self._now_ms - window_ms if window_ms is not None else None
            per_topic: dict[str, TopicStats] = {}
            by_topic: dict[str, list[BusMessage]] = {}
            for msg in self._ledger:
                if lo is not None and msg.published_at_ms < lo:
                    continue
                by_topic.setdefault(msg.topic, []).append(msg)
            for topic, messages in by_topic.items():
                latencies = [
                    m.latency_ms for m in messages if m.delivered_at_ms is not None
                ]
                delivered = len(latencies)
                lost = len(messages) - delivered
                if latencies:
                    arr = np.asarray(latencies)
                    stats = TopicStats(
                        published=len(messages),
                        delivered=delivered,
                        lost=lost,
                        mean_ms=float(arr.mean()),
                        min_ms=float(arr.min()),
                        max_ms=float(arr.max()),
                        p95_ms=float(np.percentile(arr, 95.0, method="linear")),
                    )
                else:
                    stats = TopicStats(
                        published=len(messages),
                        delivered=0,
                        lost=lost,
                        mean_ms=None,
                        min_ms=None,
                        max_ms=None,
                        p95_ms=None,
                    )
                per_topic[topic] = stats
            return LatencyReport(per_topic=per_topic)

    def close(self) -> None:
        with self._lock:
            self._closed = True


# --- TCP transport ---
#
# Wire format: newline-delimited JSON, one frame per line.
#   publish:    {"topic","timestamp_ms","tag","value","published_at_ms"}
#   subscribe:  {"subscribe": "<topic>"}
#   clock:      {"advance_ms": <virtual ms>}   (driver-only control frame)
# Delivered frames reuse the publish schema.


def _frame_for(message: BusMessage) -> bytes:
    doc = {
        "topic": message.topic,
        "timestamp_ms": message.sample.timestamp_ms,
        "tag": message.sample.tag,
        "value": message.sample.value,
        "published_at_ms": message.published_at_ms,
    }
    return (json.dumps(doc, sort_keys=True) + "\n").encode()


class _TcpHandler(socketserver.StreamRequestHandler):
    def handle(self):
        server: TcpBusServer = self.server  # type: ignore[assignment]
        topics: set[str] = set()
        send_lock = threading.Lock()

        def sender(message: BusMessage) -> None:
            if message.topic in topics:
                with send_lock:
                    try:
                        self.wfile.write(_frame_for(message))
                        self.wfile.flush()
                    except OSError:
                        pass

        server.register_sender(sender)
        try:
            for raw in self.rfile:
                line = raw.strip()
                if not line:
                    continue
                doc = json.loads(line)
                if "subscribe" in doc:
                    topics.add(str(doc["subscribe"]))
                elif "advance_ms" in doc:
                    server.dispatch_to(float(doc["advance_ms"]))
                else:
                    sample = Sample(
                        timestamp_ms=int(doc["timestamp_ms"]),
                        tag=str(doc["tag"]),
                        value=float(doc["value"]),
                    )
                    server.bus.publish(
                        str(doc["topic"]), sample, published_at_ms=float(doc["published_at_ms"])
                    )
        finally:
            server.unregister_sender(sender)


class TcpBusServer(socketserver.ThreadingTCPServer):
    """Socket front end over a Bus; scheduling stays in the shared core."""

    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, bus: Bus, host: str = "127.0.0.1", port: int = 0):
        super().__init__((host, port), _TcpHandler)
        self.bus = bus
        self._senders: list = []
        self._senders_lock = threading.Lock()
        self._thread: threading.Thread | None = None

    @property
    def address(self) -> tuple[str, int]:
        return self.server_address[0], self.server_address[1]

    def register_sender(self, sender) -> None:
        with self._senders_lock:
            self._senders.append(sender)

    def unregister_sender(self, sender) -> None:
        with self._senders_lock:
            if sender in self._senders:
                self._senders.remove(sender)

    def dispatch_to(self, t_ms: float) -> None:
        for message in self.bus.advance_to(t_ms):
            with self._senders_lock:
                for sender in list(self._senders):
                    sender(message)

    def start(self) -> None:
        self._thread = threading.Thread(target=self.serve_forever, daemon=True)
        self._thread.start()

    def stop(self) -> None:
        self.shutdown()
        self.server_close()


class TcpBusClient:
    """Minimal line-oriented client for tests and demos."""

    def __init__(self, host: str, port: int, timeout: float = 5.0):
        self._sock = socket.create_connection((host, port), timeout=timeout)
        self._file = self._sock.makefile("rwb")

    def _send(self, doc: dict) -> None:
        self._file.write((json.dumps(doc) + "\n").encode())
        self._file.flush()

    def subscribe(self, topic: str) -> None:
        self._send({"subscribe": topic})

    def publish(self, topic: str, sample: Sample, published_at_ms: float) -> None:
        self._send(
            {
                "topic": topic,
                "timestamp_ms": sample.timestamp_ms,
                "tag": sample.tag,
                "value": sample.value,
                "published_at_ms": published_at_ms,
            }
        )

    def advance(self, t_ms: float) -> None:
        self._send({"advance_ms": t_ms})

    def recv(self) -> dict | None:
        line = self._file.readline()
        if not line:
            return None
        return json.loads(line)

    def close(self) -> None:
        try:
            self._file.close()
        finally:
            self._sock.close()
