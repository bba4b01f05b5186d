"""Push subscription management and the outbound delivery client.

A push subscription streams the virtual sensor's output to its endpoint
until expiry. Delivery is at-most-once: an attempt plus up to 3 retries
(250/500/1000 ms backoff), after which the payload is dropped, the drop is
counted, and the subscription stays alive. Sequence numbers are gapless in
send order; a skipped empty raw batch consumes no sequence number. No
delivery is ever attempted with a send time past expiry.

The delivery cadence is max(subscription interval, VSD emit interval): a
subscriber can slow a stream down but never make the sensor emit faster
than its definition allows.

Subscriptions (with their sequence numbers and raw cursors) persist in
``data_dir/subscriptions.json`` so a restarted node resumes streams that
have not yet expired.
"""

from __future__ import annotations

import json
import logging
import os
import threading
from dataclasses import dataclass, field
from typing import Any
from urllib.error import URLError
from urllib.parse import urlsplit

from .clock import Clock, TaskHandle
from .engine import Engine, UnknownVirtualSensor
from .httpd import HttpApiError, http_json
from .metrics import NodeCounters
from .model import MosdenError, Subscription, canonical_json_bytes
from .store import elements_to_jsonable

log = logging.getLogger(__name__)

__all__ = ["SubscriptionManager", "PushDelivery", "RETRY_BACKOFF_MS"]

RETRY_BACKOFF_MS = (250, 500, 1000)


@dataclass
class PushDelivery:
    """One outbound envelope, as it goes over the wire."""

    subscription_id: str
    sequence_no: int
    sent_at: int
    payload: dict[str, Any]
    attempts: int = 0

    def to_jsonable(self) -> dict[str, Any]:
        return {
            "subscription_id": self.subscription_id,
            "sequence_no": self.sequence_no,
            "sent_at": self.sent_at,
            "payload": self.payload,
        }


@dataclass
class _SubState:
    sub: Subscription
    sequence_no: int = 0
    cursor_ts: int | None = None  # raw mode: last timestamp already delivered
    deliveries: int = 0
    drops: int = 0
    attempts: int = 0
    task: TaskHandle | None = None
    lock: threading.Lock = field(default_factory=threading.Lock)


class SubscriptionManager:
    def __init__(self, node_id: str, engine: Engine, clock: Clock,
                 counters: NodeCounters, data_dir: str | None = None):
        self.node_id = node_id
        self.engine = engine
        self.clock = clock
        self.counters = counters
        self.data_dir = data_dir
        self._states: dict[str, _SubState] = {}
        self._next_id = 1
        self._lock = threading.RLock()
        if data_dir:
            self._restore()

    # -- public surface

    def create(self, vs_name: str, mode: str, interval_ms: int, expiry: int,
               delivery_endpoint: str | None = None,
               payload_kind: str = "processed",
               sub_id: str | None = None) -> Subscription:
        self.engine.task_for(vs_name)  # raises UnknownVirtualSensor
        now = self.clock.now_ms()
        if expiry <= now:
            raise HttpApiError(400, "expired_on_arrival",
                               f"expiry {expiry} is not after now {now}")
        if mode == "push":
            split = urlsplit(delivery_endpoint or "")
            if split.scheme != "http" or not split.netloc:
                raise HttpApiError(400, "bad_endpoint",
                                   f"not an http URL: {delivery_endpoint!r}")
        try:
            with self._lock:
                if sub_id is None:
                    sub_id = f"{self.node_id}-s{self._next_id}"
                    self._next_id += 1
                elif sub_id in self._states:
                    # retried create with the same id must not reset the
                    # existing stream or start a second delivery loop
                    return self._states[sub_id].sub
                sub = Subscription(id=sub_id, vs_name=vs_name, mode=mode,
                                   interval_ms=interval_ms, expiry=expiry,
                                   delivery_endpoint=delivery_endpoint,
                                   payload_kind=payload_kind)
                state = _SubState(sub)
                self._states[sub.id] = state
        except MosdenError as exc:
            raise HttpApiError(400, "invalid_subscription", str(exc)) from None
        self._start_loop(state)
        self._persist()
        log.info("subscription %s on %s (%s/%s, every %d ms, expiry %d)",
                 sub.id, vs_name, mode, payload_kind, interval_ms, expiry)
        return sub

    def cancel(self, sub_id: str) -> bool:
        with self._lock:
            state = self._states.pop(sub_id, None)
        if state is None:
            return False
        if state.task is not None:
            state.task.cancel()
        self._persist()
        return True

    def cancel_for_vs(self, vs_name: str) -> int:
        """Cancel all subscriptions on a VS, sending each a final notice."""
        with self._lock:
            doomed = [s for s in self._states.values()
                      if s.sub.vs_name == vs_name]
        for state in doomed:
            if state.sub.mode == "push":
                notice = {"kind": "cancelled", "vs_name": vs_name,
                          "reason": "deactivated"}
                self._deliver(state, notice)
            self.cancel(state.sub.id)
        return len(doomed)

    def list_jsonable(self) -> list[dict[str, Any]]:
        with self._lock:
            states = sorted(self._states.values(), key=lambda s: s.sub.id)
        out = []
        for s in states:
            doc = s.sub.to_jsonable()
            doc.update(sequence_no=s.sequence_no, deliveries=s.deliveries,
                       drops=s.drops)
            out.append(doc)
        return out

    def get(self, sub_id: str) -> Subscription | None:
        with self._lock:
            state = self._states.get(sub_id)
        return state.sub if state else None

    def metrics_snapshot(self) -> dict[str, Any]:
        with self._lock:
            states = list(self._states.values())
        return {
            s.sub.id: {"vs_name": s.sub.vs_name, "deliveries": s.deliveries,
                       "drops": s.drops, "attempts": s.attempts,
                       "sequence_no": s.sequence_no}
            for s in states
        }

    def shutdown(self) -> None:
        with self._lock:
            states = list(self._states.values())
        for state in states:
            if state.task is not None:
                state.task.cancel()

    # -- delivery machinery

    def _start_loop(self, state: _SubState) -> None:
        if state.sub.mode != "push":
            return
        try:
            vsd = self.engine.task_for(state.sub.vs_name).vsd
            floor = vsd.emit_interval_ms
        except UnknownVirtualSensor:
            floor = 1
        effective = max(state.sub.interval_ms, floor)
        state.task = self.clock.schedule_periodic(
            f"deliver-{state.sub.id}", effective, lambda: self._tick(state))

    def _tick(self, state: _SubState) -> None:
        now = self.clock.now_ms()
        if now > state.sub.expiry:
            self._expire(state)
            return
        payload = self._build_payload(state)
        if payload is None:
            return
        self._deliver(state, payload)
        self._persist()

    def _build_payload(self, state: _SubState) -> dict[str, Any] | None:
        try:
            if state.sub.payload_kind == "processed":
                return self.engine.emit(state.sub.vs_name).to_jsonable()
            store = self.engine.store_for(state.sub.vs_name)
            elements = store.snapshot()
            if state.cursor_ts is not None:
                elements = [e for e in elements if e.timestamp > state.cursor_ts]
            if not elements:
                return None  # empty raw batch: nothing to send, no seq used
            state.cursor_ts = elements[-1].timestamp
            return {"kind": "raw_batch", "vs_name": state.sub.vs_name,
                    "elements": elements_to_jsonable(store.schema, elements)}
        except UnknownVirtualSensor:
            return None

    def _deliver(self, state: _SubState, payload: dict[str, Any]) -> str:
        """Send one envelope with the bounded-retry policy."""
        with state.lock:
            state.sequence_no += 1
            delivery = PushDelivery(subscription_id=state.sub.id,
                                    sequence_no=state.sequence_no,
                                    sent_at=self.clock.now_ms(),
                                    payload=payload)
            body = delivery.to_jsonable()
            for attempt in range(1 + len(RETRY_BACKOFF_MS)):
                if attempt:
                    self.clock.sleep(RETRY_BACKOFF_MS[attempt - 1])
                delivery.attempts += 1
                state.attempts += 1
                try:
                    status, _ = http_json("POST", state.sub.delivery_endpoint,
                                          body, timeout_s=10.0)
                except (URLError, OSError) as exc:
                    log.debug("delivery attempt %d for %s failed: %s",
                              delivery.attempts, state.sub.id, exc)
                    continue
                if 200 <= status < 300:
                    state.deliveries += 1
                    self.counters.record_send(len(canonical_json_bytes(body)))
                    return "ok" if delivery.attempts == 1 else "retried"
                log.debug("delivery attempt %d for %s got HTTP %d",
                          delivery.attempts, state.sub.id, status)
            state.drops += 1
            log.warning("dropped delivery %d for %s after %d attempts",
                        delivery.sequence_no, state.sub.id, delivery.attempts)
            return "dropped"

    def _expire(self, state: _SubState) -> None:
        log.info("subscription %s expired", state.sub.id)
        self.cancel(state.sub.id)

    # -- persistence

    def _path(self) -> str:
        return os.path.join(self.data_dir, "subscriptions.json")

    def _persist(self) -> None:
        if not self.data_dir:
            return
        with self._lock:
            docs = []
            for s in self._states.values():
                doc = s.sub.to_jsonable()
                doc["sequence_no"] = s.sequence_no
                if s.cursor_ts is not None:
                    doc["cursor_ts"] = s.cursor_ts
                docs.append(doc)
            next_id = self._next_id
        os.makedirs(self.data_dir, exist_ok=True)
        tmp = self._path() + ".tmp"
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump({"next_id": next_id, "subscriptions": docs}, fh, indent=1)
        os.replace(tmp, self._path())

    def _restore(self) -> None:
        path = self._path()
        if not os.path.exists(path):
            return
        try:
            with open(path, encoding="utf-8") as fh:
                snapshot = json.load(fh)
        except (OSError, ValueError) as exc:
            log.warning("could not restore subscriptions: %s", exc)
            return
        now = self.clock.now_ms()
        self._next_id = int(snapshot.get("next_id", 1))
        for doc in snapshot.get("subscriptions", []):
            try:
                sub = Subscription(
                    id=doc["id"], vs_name=doc["vs_name"], mode=doc["mode"],
                    interval_ms=doc["interval_ms"], expiry=doc["expiry"],
                    delivery_endpoint=doc.get("delivery_endpoint"),
                    payload_kind=doc.get("payload_kind", "processed"))
            except (KeyError, MosdenError) as exc:
                log.warning("skipping bad subscription record: %s", exc)
                continue
            if sub.expiry <= now:
                continue
            state = _SubState(sub, sequence_no=int(doc.get("sequence_no", 0)),
                              cursor_ts=doc.get("cursor_ts"))
            self._states[sub.id] = state

    def start_restored(self) -> None:
        """Start delivery loops for restored subscriptions.

        Separate from __init__ because the engine's VSDs must be active
        first for the emit-interval floor to be known.
        """
        with self._lock:
            states = [s for s in self._states.values() if s.task is None]
        for state in states:
            self._start_loop(state)
