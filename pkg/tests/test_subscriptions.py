"""Push delivery: cadence, sequence numbers, retries, expiry, persistence."""

from __future__ import annotations

import json
import os

import pytest

from mosden.clock import MockClock
from mosden.engine import Engine
from mosden.httpd import JsonHttpServer
from mosden.metrics import NodeCounters
from mosden.plugins.host import PluginRegistry
from mosden.plugins.sim import register_builtin
from mosden.subscriptions import RETRY_BACKOFF_MS, SubscriptionManager

from conftest import sim_vsd

FAR = 10_000_000_000_000  # an expiry far past any test's clock


class Receiver:
    """Capture endpoint; optionally scripted to answer non-200 first."""

    def __init__(self, statuses=()):
        self.server = JsonHttpServer()
        self.envelopes = []
        self.statuses = list(statuses)
        self.server.route("POST", r"/ingest", self._handle)
        self.server.start()

    def _handle(self, match, query, body):
        self.envelopes.append(body)
        status = self.statuses.pop(0) if self.statuses else 200
        return status, {"accepted": status < 300}

    @property
    def url(self) -> str:
        return self.server.base_url + "/ingest"

    def stop(self) -> None:
        self.server.stop()


@pytest.fixture
def receiver():
    r = Receiver()
    yield r
    r.stop()


@pytest.fixture
def manager(clock, tmp_path):
    """(clock, engine, manager) wired together without a node."""
    registry = PluginRegistry(clock=clock)
    register_builtin(registry)
    engine = Engine(registry, clock=clock)
    mgr = SubscriptionManager("n1", engine, clock, NodeCounters(),
                              data_dir=str(tmp_path / "subs"))
    yield mgr
    mgr.shutdown()
    engine.shutdown()


def test_push_processed_delivers_on_cadence(clock, manager, receiver):
    manager.engine.activate(sim_vsd("vs_a", kind="ramp", emit_ms=2000))
    manager.create("vs_a", "push", 1000, FAR, delivery_endpoint=receiver.url)
    clock.advance(6000)
    # cadence is the emit interval: the subscriber asked for 1000 but the
    # definition only emits every 2000
    assert len(receiver.envelopes) == 3
    seqs = [e["sequence_no"] for e in receiver.envelopes]
    assert seqs == [1, 2, 3]
    first = receiver.envelopes[0]
    assert first["subscription_id"] == "n1-s1"
    assert first["sent_at"] == clock.now_ms() - 4000
    assert first["payload"]["kind"] == "window_result"
    assert first["payload"]["vs_name"] == "vs_a"
    assert first["payload"]["sample_count"] == 2


def test_subscriber_can_slow_but_not_accelerate(clock, manager, receiver):
    manager.engine.activate(sim_vsd("vs_a", emit_ms=1000))
    manager.create("vs_a", "push", 5000, FAR, delivery_endpoint=receiver.url)
    clock.advance(10_000)
    assert len(receiver.envelopes) == 2


def test_push_raw_cursor_skips_empty_batches(clock, manager, receiver):
    # every odd read re-serves a stale timestamp and gets dropped, so every
    # other delivery tick finds nothing new
    manager.engine.activate(sim_vsd("vs_a", kind="ramp", sampling_ms=1000,
                                    emit_ms=1000,
                                    fault_mode="duplicate_timestamp"))
    manager.create("vs_a", "push", 1000, FAR, delivery_endpoint=receiver.url,
                   payload_kind="raw")
    clock.advance(4000)
    # empty batches send nothing and burn no sequence number
    assert [e["sequence_no"] for e in receiver.envelopes] == [1, 2]
    batches = [e["payload"] for e in receiver.envelopes]
    assert all(b["kind"] == "raw_batch" for b in batches)
    values = [el["values"]["temp"] for b in batches for el in b["elements"]]
    assert values == [0.0, 2.0]


def test_transient_failures_are_retried(clock, manager):
    recv = Receiver(statuses=[500, 503])
    try:
        manager.engine.activate(sim_vsd("vs_a", emit_ms=1000))
        manager.create("vs_a", "push", 1000, FAR, delivery_endpoint=recv.url)
        t0 = clock.now_ms()
        clock.advance(1000)
        # one envelope, three attempts, two backoffs burned
        assert [e["sequence_no"] for e in recv.envelopes] == [1, 1, 1]
        snap = manager.metrics_snapshot()["n1-s1"]
        assert snap["deliveries"] == 1
        assert snap["attempts"] == 3
        assert snap["drops"] == 0
        assert clock.now_ms() - t0 == 1000 + sum(RETRY_BACKOFF_MS[:2])
    finally:
        recv.stop()


def test_exhausted_retries_drop_and_move_on(clock, manager):
    recv = Receiver(statuses=[500] * 8)
    try:
        manager.engine.activate(sim_vsd("vs_a", emit_ms=1000))
        manager.create("vs_a", "push", 1000, FAR, delivery_endpoint=recv.url)
        clock.advance(1000)
        snap = manager.metrics_snapshot()["n1-s1"]
        assert snap["drops"] == 1
        assert snap["deliveries"] == 0
        assert snap["attempts"] == 1 + len(RETRY_BACKOFF_MS)
        # the stream is still alive: the next window goes through
        clock.advance(5000)
        snap = manager.metrics_snapshot()["n1-s1"]
        assert snap["deliveries"] >= 1
        assert recv.envelopes[-1]["sequence_no"] == snap["sequence_no"]
    finally:
        recv.stop()


def test_unreachable_endpoint_counts_drops(clock, manager):
    # a port nothing listens on: every attempt raises, nothing arrives
    manager.engine.activate(sim_vsd("vs_a", emit_ms=1000))
    manager.create("vs_a", "push", 1000, FAR,
                   delivery_endpoint="http://127.0.0.1:9/ingest")
    clock.advance(1000)
    snap = manager.metrics_snapshot()["n1-s1"]
    assert snap["drops"] == 1
    assert snap["attempts"] == 1 + len(RETRY_BACKOFF_MS)


def test_expiry_boundary(clock, manager, receiver):
    manager.engine.activate(sim_vsd("vs_a", emit_ms=1000))
    expiry = clock.now_ms() + 2000
    manager.create("vs_a", "push", 1000, expiry,
                   delivery_endpoint=receiver.url)
    clock.advance(5000)
    # sends at expiry-1000 and exactly at expiry are legal; past it, the
    # subscription retires itself
    assert [e["sent_at"] for e in receiver.envelopes] == [expiry - 1000, expiry]
    assert manager.list_jsonable() == []


def test_deactivation_sends_final_notice(clock, manager, receiver):
    manager.engine.activate(sim_vsd("vs_a", emit_ms=1000))
    manager.create("vs_a", "push", 1000, FAR, delivery_endpoint=receiver.url)
    clock.advance(2000)
    assert len(receiver.envelopes) == 2
    manager.cancel_for_vs("vs_a")
    last = receiver.envelopes[-1]
    assert last["payload"] == {"kind": "cancelled", "vs_name": "vs_a",
                               "reason": "deactivated"}
    assert last["sequence_no"] == 3
    assert manager.list_jsonable() == []
    # loops are gone: time passing sends nothing more
    clock.advance(5000)
    assert len(receiver.envelopes) == 3


def test_pull_subscriptions_never_start_loops(clock, manager):
    manager.engine.activate(sim_vsd("vs_a", emit_ms=1000))
    sub = manager.create("vs_a", "pull", 1000, FAR)
    clock.advance(5000)
    snap = manager.metrics_snapshot()[sub.id]
    assert snap == {"vs_name": "vs_a", "deliveries": 0, "drops": 0,
                    "attempts": 0, "sequence_no": 0}


def test_create_same_id_is_idempotent(clock, manager, receiver):
    manager.engine.activate(sim_vsd("vs_a", emit_ms=1000))
    first = manager.create("vs_a", "push", 1000, FAR,
                           delivery_endpoint=receiver.url, sub_id="ext-1")
    again = manager.create("vs_a", "push", 1000, FAR,
                           delivery_endpoint=receiver.url, sub_id="ext-1")
    assert again is first
    clock.advance(3000)
    # one loop, not two: sequence numbers do not interleave
    assert [e["sequence_no"] for e in receiver.envelopes] == [1, 2, 3]


def test_persistence_and_restore(clock, manager, receiver, tmp_path):
    manager.engine.activate(sim_vsd("vs_a", kind="ramp", sampling_ms=1000,
                                    emit_ms=1000))
    manager.create("vs_a", "push", 1000, FAR, delivery_endpoint=receiver.url,
                   payload_kind="raw")
    ends_soon = clock.now_ms() + 1500
    manager.create("vs_a", "push", 1000, ends_soon,
                   delivery_endpoint=receiver.url)
    manager.create("vs_a", "pull", 60_000, FAR)
    clock.advance(3000)

    path = os.path.join(str(tmp_path / "subs"), "subscriptions.json")
    with open(path, encoding="utf-8") as fh:
        snapshot = json.load(fh)
    assert snapshot["next_id"] == 4
    by_id = {d["id"]: d for d in snapshot["subscriptions"]}
    # the expired push sub has already been dropped from the table
    assert set(by_id) == {"n1-s1", "n1-s3"}
    assert by_id["n1-s1"]["sequence_no"] == 3
    assert by_id["n1-s1"]["cursor_ts"] == manager.engine.store_for(
        "vs_a").latest().timestamp

    # a fresh manager over the same directory resumes where this one stopped
    manager.shutdown()
    restored = SubscriptionManager("n1", manager.engine, clock,
                                   NodeCounters(), data_dir=str(tmp_path / "subs"))
    assert {s["id"] for s in restored.list_jsonable()} == {"n1-s1", "n1-s3"}
    restored.start_restored()
    n_before = len(receiver.envelopes)
    clock.advance(2000)
    new = receiver.envelopes[n_before:]
    # sequence continues gaplessly and the raw cursor does not re-send
    assert [e["sequence_no"] for e in new] == [4, 5]
    sent_values = [el["values"]["temp"] for e in new
                   for el in e["payload"]["elements"]]
    assert sent_values == [3.0, 4.0]
    # no id reuse after restore
    fresh = restored.create("vs_a", "pull", 1000, FAR)
    assert fresh.id == "n1-s4"
    restored.shutdown()


def test_restore_skips_expired_records(clock, tmp_path):
    registry = PluginRegistry(clock=clock)
    register_builtin(registry)
    engine = Engine(registry, clock=clock)
    data_dir = str(tmp_path / "subs")
    os.makedirs(data_dir)
    stale = {"next_id": 7, "subscriptions": [
        {"id": "n1-s2", "vs_name": "vs_a", "mode": "pull",
         "interval_ms": 1000, "expiry": clock.now_ms() - 1},
        {"id": "n1-s6", "vs_name": "vs_a", "mode": "pull",
         "interval_ms": 1000, "expiry": clock.now_ms() + 60_000},
        {"id": "bad", "vs_name": "vs_a", "mode": "carrier-pigeon",
         "interval_ms": 1000, "expiry": clock.now_ms() + 60_000},
    ]}
    with open(os.path.join(data_dir, "subscriptions.json"), "w") as fh:
        json.dump(stale, fh)
    mgr = SubscriptionManager("n1", engine, clock, NodeCounters(),
                              data_dir=data_dir)
    assert [s["id"] for s in mgr.list_jsonable()] == ["n1-s6"]
    engine.shutdown()
