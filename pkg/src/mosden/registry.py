"""Desk-scale registry: sensor catalog, request dispatch, stream sink.

Nodes re-register their descriptors every 10 s; a record is "live" while
its last registration is within the 30 s horizon, and only live records
match user requests. Dispatching a request creates one push subscription
per matched (node, virtual sensor) pair, with a deterministic subscription
id derived from the request id, so retrying a dispatch never duplicates
streams. Deliveries land in one JSON-lines file per request; duplicates
(same subscription and sequence number) are dropped, and deliveries for
unknown subscriptions go to a quarantine file instead of being lost.

A user request carries window/aggregation parameters; they are recorded
and echoed verbatim but the delivered stream is shaped by each node's own
virtual sensor definition (how a cloud should override per-node windowing
is deliberately left open here).
"""

from __future__ import annotations

import json
import logging
import os
import threading
from dataclasses import dataclass, field
from typing import Any
from urllib.error import URLError

from .clock import Clock, SystemClock
from .httpd import HttpApiError, JsonHttpServer, http_json
from .model import MosdenError, SensorDescriptor, canonical_json_bytes

log = logging.getLogger(__name__)

__all__ = ["Registry", "RegistryRecord", "UserRequest",
           "LIVENESS_HORIZON_MS"]

LIVENESS_HORIZON_MS = 30_000


@dataclass
class RegistryRecord:
    descriptor: SensorDescriptor
    node_base_url: str
    last_seen: int

    def to_jsonable(self) -> dict[str, Any]:
        doc = self.descriptor.to_jsonable()
        doc["node_base_url"] = self.node_base_url
        doc["last_seen"] = self.last_seen
        return doc


@dataclass(frozen=True)
class UserRequest:
    """What a consumer asks for: which sensors, how often, for how long."""

    id: str
    criteria: dict[str, str]
    window: dict[str, Any]
    aggregations: list[dict[str, str]]
    interval_ms: int
    duration_ms: int
    payload_kind: str = "processed"

    def __post_init__(self) -> None:
        if self.duration_ms <= 0:
            raise MosdenError("duration_ms must be > 0")
        if self.interval_ms <= 0:
            raise MosdenError("interval_ms must be > 0")

    def to_jsonable(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "criteria": dict(self.criteria),
            "window": dict(self.window),
            "aggregations": [dict(a) for a in self.aggregations],
            "interval_ms": self.interval_ms,
            "duration_ms": self.duration_ms,
            "payload_kind": self.payload_kind,
        }


@dataclass
class _RequestState:
    request: UserRequest
    subscription_ids: list[str] = field(default_factory=list)
    failures: list[dict[str, str]] = field(default_factory=list)


class Registry:
    def __init__(self, data_dir: str, clock: Clock | None = None,
                 host: str = "127.0.0.1", port: int = 0,
                 liveness_horizon_ms: int = LIVENESS_HORIZON_MS):
        self.clock = clock if clock is not None else SystemClock()
        self.data_dir = data_dir
        self.results_dir = os.path.join(data_dir, "results")
        os.makedirs(self.results_dir, exist_ok=True)
        self.liveness_horizon_ms = liveness_horizon_ms
        self._records: dict[tuple[str, str], RegistryRecord] = {}
        self._requests: dict[str, _RequestState] = {}
        self._sub_to_request: dict[str, str] = {}
        self._seen_seq: dict[str, set] = {}
        self._next_request = 1
        self.ingested = 0
        self.duplicates = 0
        self.quarantined = 0
        self._lock = threading.RLock()
        self._io_lock = threading.Lock()
        self.server = JsonHttpServer(host, port)
        self._install_routes()
        self._restore()

    # -- lifecycle

    @property
    def base_url(self) -> str:
        return self.server.base_url

    def start(self) -> None:
        self.server.start()
        log.info("registry serving on %s", self.base_url)

    def stop(self) -> None:
        self.server.stop()

    # -- core operations

    def register_sensors(self, node_id: str, base_url: str,
                         descriptors: list[SensorDescriptor]) -> int:
        now = self.clock.now_ms()
        with self._lock:
            for d in descriptors:
                self._records[(node_id, d.vs_name)] = RegistryRecord(
                    descriptor=d, node_base_url=base_url, last_seen=now)
            # a heartbeat with any payload refreshes the node's other records
            for key, record in self._records.items():
                if key[0] == node_id:
                    record.last_seen = now
        self._snapshot()
        return len(descriptors)

    def match_request(self, criteria: dict[str, str]) -> list[RegistryRecord]:
        """Live records whose metadata satisfies every criterion."""
        horizon = self.clock.now_ms() - self.liveness_horizon_ms
        with self._lock:
            out = []
            for record in self._records.values():
                if record.last_seen < horizon:
                    continue
                meta = record.descriptor.metadata
                if all(meta.get(k) == v for k, v in criteria.items()):
                    out.append(record)
        out.sort(key=lambda r: (r.descriptor.node_id, r.descriptor.vs_name))
        return out

    def dispatch(self, request: UserRequest) -> _RequestState:
        matched = self.match_request(request.criteria)
        if not matched:
            raise HttpApiError(404, "no_match",
                               f"no live sensors satisfy {request.criteria}")
        state = _RequestState(request)
        expiry = self.clock.now_ms() + request.duration_ms
        for record in matched:
            d = record.descriptor
            sub_id = f"{request.id}:{d.node_id}:{d.vs_name}"
            body = {
                "id": sub_id,
                "vs_name": d.vs_name,
                "mode": "push",
                "interval_ms": request.interval_ms,
                "expiry": expiry,
                "delivery_endpoint": f"{self.base_url}/registry/ingest",
                "payload_kind": request.payload_kind,
            }
            try:
                status, reply = http_json(
                    "POST", f"{record.node_base_url}/subscriptions", body,
                    timeout_s=5.0)
            except (URLError, OSError) as exc:
                state.failures.append({"node_id": d.node_id, "error": str(exc)})
                continue
            if status not in (200, 201):
                detail = reply.get("detail", "") if isinstance(reply, dict) else ""
                state.failures.append(
                    {"node_id": d.node_id, "error": f"HTTP {status} {detail}"})
                continue
            granted = reply.get("id", sub_id) if isinstance(reply, dict) else sub_id
            state.subscription_ids.append(granted)
            with self._lock:
                self._sub_to_request[granted] = request.id
        with self._lock:
            self._requests[request.id] = state
        self._snapshot()
        return state

    def ingest(self, envelope: Any) -> str:
        """Sink one delivery; returns stored|duplicate|quarantined."""
        if (not isinstance(envelope, dict)
                or not isinstance(envelope.get("subscription_id"), str)
                or not isinstance(envelope.get("sequence_no"), int)
                or isinstance(envelope.get("sequence_no"), bool)
                or "payload" not in envelope):
            raise HttpApiError(400, "bad_delivery",
                               "expected {subscription_id, sequence_no, payload}")
        sub_id = envelope["subscription_id"]
        seq = envelope["sequence_no"]
        with self._lock:
            request_id = self._sub_to_request.get(sub_id)
            if request_id is not None:
                seen = self._seen_seq.setdefault(sub_id, set())
                if seq in seen:
                    self.duplicates += 1
                    return "duplicate"
                seen.add(seq)
                self.ingested += 1
            else:
                self.quarantined += 1
        if request_id is None:
            self._append_jsonl(os.path.join(self.results_dir, "quarantine.jsonl"),
                               envelope)
            return "quarantined"
        self._append_jsonl(self._results_path(request_id), envelope)
        return "stored"

    def results(self, request_id: str) -> list[dict[str, Any]]:
        path = self._results_path(request_id)
        if not os.path.exists(path):
            return []
        out = []
        with self._io_lock, open(path, "rb") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    out.append(json.loads(line))
        return out

    # -- files

    def _results_path(self, request_id: str) -> str:
        safe = "".join(c if c.isalnum() or c in "-_." else "_"
                       for c in request_id)
        return os.path.join(self.results_dir, f"{safe}.jsonl")

    def _append_jsonl(self, path: str, doc: Any) -> None:
        with self._io_lock, open(path, "ab") as fh:
            fh.write(canonical_json_bytes(doc) + b"\n")

    def _snapshot(self) -> None:
        with self._lock:
            doc = {
                "records": [r.to_jsonable() for r in self._records.values()],
                "requests": {
                    rid: {"request": s.request.to_jsonable(),
                          "subscription_ids": s.subscription_ids,
                          "failures": s.failures}
                    for rid, s in self._requests.items()
                },
                "next_request": self._next_request,
            }
        tmp = os.path.join(self.data_dir, "registry.json.tmp")
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=1)
        os.replace(tmp, os.path.join(self.data_dir, "registry.json"))

    def _restore(self) -> None:
        path = os.path.join(self.data_dir, "registry.json")
        if not os.path.exists(path):
            return
        try:
            with open(path, encoding="utf-8") as fh:
                doc = json.load(fh)
            for rec in doc.get("records", []):
                descriptor = SensorDescriptor.from_jsonable(rec)
                self._records[(descriptor.node_id, descriptor.vs_name)] = \
                    RegistryRecord(descriptor, rec.get("node_base_url", ""),
                                   int(rec.get("last_seen", 0)))
            for rid, rdoc in doc.get("requests", {}).items():
                request = UserRequest(**rdoc["request"])
                state = _RequestState(request,
                                      list(rdoc.get("subscription_ids", [])),
                                      list(rdoc.get("failures", [])))
                self._requests[rid] = state
                for sub_id in state.subscription_ids:
                    self._sub_to_request[sub_id] = rid
            self._next_request = int(doc.get("next_request", 1))
        except (MosdenError, ValueError, KeyError, TypeError) as exc:
            log.warning("could not restore registry snapshot: %s", exc)

    # -- HTTP surface

    def _install_routes(self) -> None:
        s = self.server
        s.route("POST", r"/registry/sensors", self._h_register)
        s.route("GET", r"/registry/sensors", self._h_list)
        s.route("POST", r"/registry/requests", self._h_request)
        s.route("GET", r"/registry/requests/(?P<id>[^/]+)/results", self._h_results)
        s.route("POST", r"/registry/ingest", self._h_ingest)
        s.route("GET", r"/healthz", self._h_healthz)

    def _h_register(self, match, query, body):
        if not isinstance(body, dict):
            raise HttpApiError(400, "bad_request", "expected a JSON object body")
        node_id = body.get("node_id")
        base_url = body.get("base_url")
        if not isinstance(node_id, str) or not node_id:
            raise HttpApiError(400, "bad_request", "missing node_id")
        if not isinstance(base_url, str) or not base_url:
            raise HttpApiError(400, "bad_request", "missing base_url")
        try:
            descriptors = [SensorDescriptor.from_jsonable(d)
                           for d in body.get("descriptors", [])]
        except (MosdenError, TypeError) as exc:
            raise HttpApiError(400, "bad_descriptor", str(exc)) from None
        n = self.register_sensors(node_id, base_url, descriptors)
        return 200, {"registered": n}

    def _h_list(self, match, query, body):
        with self._lock:
            records = sorted(self._records.values(),
                             key=lambda r: (r.descriptor.node_id,
                                            r.descriptor.vs_name))
        nodes: dict[str, dict[str, Any]] = {}
        for record in records:
            node = nodes.setdefault(record.descriptor.node_id, {
                "node_id": record.descriptor.node_id,
                "base_url": record.node_base_url,
                "last_seen": record.last_seen,
                "sensors": [],
            })
            node["last_seen"] = max(node["last_seen"], record.last_seen)
            node["sensors"].append(record.descriptor.to_jsonable())
        return 200, {"nodes": list(nodes.values())}

    def _h_request(self, match, query, body):
        if not isinstance(body, dict):
            raise HttpApiError(400, "bad_request", "expected a JSON object body")
        criteria = body.get("criteria", {})
        if not isinstance(criteria, dict):
            raise HttpApiError(400, "bad_request", "criteria must be an object")
        with self._lock:
            request_id = body.get("id") or f"req-{self._next_request}"
            self._next_request += 1
        try:
            request = UserRequest(
                id=str(request_id),
                criteria={str(k): str(v) for k, v in criteria.items()},
                window=body.get("window", {}),
                aggregations=body.get("aggregations", []),
                interval_ms=int(body.get("interval_ms", 1000)),
                duration_ms=int(body.get("duration_ms", 0)),
                payload_kind=str(body.get("payload_kind", "processed")))
        except (MosdenError, ValueError, TypeError) as exc:
            raise HttpApiError(400, "bad_request", str(exc)) from None
        state = self.dispatch(request)
        status = 200 if state.subscription_ids else 502
        return status, {
            "request_id": request.id,
            "subscriptions": state.subscription_ids,
            "failures": state.failures,
        }

    def _h_results(self, match, query, body):
        request_id = match.group("id")
        with self._lock:
            known = request_id in self._requests
        if not known:
            raise HttpApiError(404, "unknown_request", request_id)
        rows = self.results(request_id)
        return 200, {"request_id": request_id, "count": len(rows),
                     "results": rows}

    def _h_ingest(self, match, query, body):
        outcome = self.ingest(body)
        return 200, {"outcome": outcome}

    def _h_healthz(self, match, query, body):
        with self._lock:
            return 200, {"status": "ok", "records": len(self._records),
                         "requests": len(self._requests),
                         "ingested": self.ingested,
                         "duplicates": self.duplicates,
                         "quarantined": self.quarantined}
