"""One edge node: plugins + wrapper engine + stores + HTTP API.

The node boots from a JSON config, activates every virtual sensor
definition in its VSD directory, serves the query/subscription API on
loopback HTTP, and (when a registry URL is configured) re-registers its
sensors every 10 s as a heartbeat.
"""

from __future__ import annotations

import json
import logging
import os
import re
from typing import Any
from urllib.error import URLError

from .clock import Clock, SystemClock, TaskHandle
from .engine import Engine, UnknownVirtualSensor
from .httpd import HttpApiError, JsonHttpServer, http_json
from .metrics import LatencyHistogram, NodeCounters
from .model import (
    Aggregation,
    CostParameters,
    MosdenError,
    PluginBinding,
    VirtualSensorDefinition,
    WindowSpec,
    parse_vsd,
)
from .offload import account
from .plugins import peer as peer_plugin
from .plugins import sim as sim_plugin
from .plugins.host import PluginProtocolError, PluginRegistry
from .store import elements_to_jsonable, evaluate_window
from .subscriptions import SubscriptionManager

log = logging.getLogger(__name__)

__all__ = ["Node", "NodeConfig", "ConfigError",
           "RemoteUnreachable", "RemoteUnknownVS"]

RemoteUnreachable = peer_plugin.RemoteUnreachable
RemoteUnknownVS = peer_plugin.RemoteUnknownVS

HEARTBEAT_INTERVAL_MS = 10_000
EVICTION_SWEEP_INTERVAL_MS = 60_000

DATA_PATH_RE = r"^/sensors/[^/]+/data$"


class ConfigError(MosdenError):
    pass


class NodeConfig:
    """Validated node configuration (see from_jsonable for the schema)."""

    def __init__(self, node_id: str, host: str, port: int, plugin_dir: str,
                 data_dir: str, cost_model: CostParameters,
                 vsd_dir: str | None = None, registry_url: str | None = None,
                 plugin_budget_bytes: int | None = None, journal: bool = True,
                 call_timeout_ms: int = 5000):
        self.node_id = node_id
        self.host = host
        self.port = port
        self.plugin_dir = plugin_dir
        self.data_dir = data_dir
        self.cost_model = cost_model
        self.vsd_dir = vsd_dir
        self.registry_url = registry_url.rstrip("/") if registry_url else None
        self.plugin_budget_bytes = plugin_budget_bytes
        self.journal = journal
        self.call_timeout_ms = call_timeout_ms

    @classmethod
    def from_jsonable(cls, doc: Any, base_dir: str = ".") -> "NodeConfig":
        if not isinstance(doc, dict):
            raise ConfigError("node config must be a JSON object")

        def need(key: str) -> Any:
            if key not in doc:
                raise ConfigError(f"missing config key: /{key}")
            return doc[key]

        node_id = need("node_id")
        if not isinstance(node_id, str) or not node_id:
            raise ConfigError("node_id must be a non-empty string: /node_id")
        listen = doc.get("listen", "127.0.0.1:0")
        if not isinstance(listen, str) or ":" not in listen:
            raise ConfigError('listen must be "host:port": /listen')
        host, _, port_s = listen.rpartition(":")
        try:
            port = int(port_s)
        except ValueError:
            raise ConfigError(f"bad listen port {port_s!r}: /listen") from None
        plugin_dir = os.path.join(base_dir, need("plugin_dir"))
        if not os.path.isdir(plugin_dir):
            raise ConfigError(f"plugin_dir does not exist: {plugin_dir}")
        data_dir = os.path.join(base_dir, need("data_dir"))
        try:
            cost_model = CostParameters.from_jsonable(doc.get("cost_model", {}))
        except MosdenError as exc:
            raise ConfigError(f"bad cost_model: {exc}") from None
        vsd_dir = doc.get("vsd_dir")
        if vsd_dir is not None:
            vsd_dir = os.path.join(base_dir, vsd_dir)
            if not os.path.isdir(vsd_dir):
                raise ConfigError(f"vsd_dir does not exist: {vsd_dir}")
        budget = doc.get("plugin_budget_bytes")
        if budget is not None and (not isinstance(budget, int) or budget < 0):
            raise ConfigError("plugin_budget_bytes must be a non-negative integer")
        return cls(node_id=node_id, host=host, port=port, plugin_dir=plugin_dir,
                   data_dir=data_dir, cost_model=cost_model, vsd_dir=vsd_dir,
                   registry_url=doc.get("registry_url"),
                   plugin_budget_bytes=budget,
                   journal=bool(doc.get("journal", True)),
                   call_timeout_ms=int(doc.get("call_timeout_ms", 5000)))

    @classmethod
    def from_file(cls, path: str) -> "NodeConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                doc = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
        except ValueError as exc:
            raise ConfigError(f"config is not JSON: {exc}") from None
        return cls.from_jsonable(doc, base_dir=os.path.dirname(path) or ".")


class Node:
    def __init__(self, config: NodeConfig, clock: Clock | None = None):
        self.config = config
        self.clock = clock if clock is not None else SystemClock()
        os.makedirs(config.data_dir, exist_ok=True)
        self.plugin_registry = PluginRegistry(
            clock=self.clock, call_timeout_ms=config.call_timeout_ms)
        sim_plugin.register_builtin(self.plugin_registry)
        peer_plugin.register_builtin(self.plugin_registry)
        self.plugin_registry.discover(config.plugin_dir)
        self.engine = Engine(
            self.plugin_registry, clock=self.clock,
            data_dir=config.data_dir if config.journal else None,
            on_deactivate=lambda vs: self.subscriptions.cancel_for_vs(vs))
        self.counters = NodeCounters()
        self.l2_latency_ms = LatencyHistogram()
        self.subscriptions = SubscriptionManager(
            config.node_id, self.engine, self.clock, self.counters,
            data_dir=config.data_dir)
        self.server = JsonHttpServer(config.host, config.port)
        self._install_routes()
        self.server.set_observer(self._observe_request)
        self._tasks: list[TaskHandle] = []
        self._activation_failures: dict[str, str] = {}

    # -- lifecycle

    @property
    def base_url(self) -> str:
        return self.server.base_url

    def start(self) -> None:
        self.server.start()
        if self.config.vsd_dir:
            self.activate_from_dir(self.config.vsd_dir)
        self.subscriptions.start_restored()
        if self.config.registry_url:
            self._register_with_registry()
            self._tasks.append(self.clock.schedule_periodic(
                "registry-heartbeat", HEARTBEAT_INTERVAL_MS,
                self._register_with_registry))
        if self.config.plugin_budget_bytes is not None:
            self._sweep_plugins()
            self._tasks.append(self.clock.schedule_periodic(
                "plugin-eviction", EVICTION_SWEEP_INTERVAL_MS,
                self._sweep_plugins))
        log.info("node %s serving on %s", self.config.node_id, self.base_url)

    def stop(self) -> None:
        for task in self._tasks:
            task.cancel()
        self.subscriptions.shutdown()
        self.engine.shutdown()
        self.server.stop()

    def activate_from_dir(self, vsd_dir: str) -> int:
        activated = 0
        for name in sorted(os.listdir(vsd_dir)):
            if not name.endswith(".json"):
                continue
            path = os.path.join(vsd_dir, name)
            try:
                with open(path, "rb") as fh:
                    vsd = parse_vsd(fh.read())
                self.engine.activate(vsd)
                activated += 1
            except MosdenError as exc:
                self._activation_failures[name] = str(exc)
                log.error("could not activate %s: %s", path, exc)
        return activated

    def activate(self, vsd: VirtualSensorDefinition) -> None:
        self.engine.activate(vsd)

    def peer_stream(self, remote_url: str, remote_vs: str, local_alias: str,
                    window: WindowSpec | None = None, aggregations=None,
                    sampling_interval_ms: int = 1000,
                    emit_interval_ms: int | None = None,
                    history_size: int = 1024) -> None:
        """Create a local virtual sensor backed by another node's stream."""
        vsd = VirtualSensorDefinition(
            name=local_alias,
            binding=PluginBinding(
                plugin_id=peer_plugin.PEER_PLUGIN_ID, transport="in_process",
                config={"remote_url": remote_url, "remote_vs": remote_vs}),
            window=window if window is not None else WindowSpec("count", 60),
            aggregations=tuple(aggregations) if aggregations
            else (Aggregation("temp", "avg"),),
            sampling_interval_ms=sampling_interval_ms,
            emit_interval_ms=emit_interval_ms if emit_interval_ms is not None
            else max(sampling_interval_ms, 60_000),
            history_size=history_size)
        try:
            self.engine.activate(vsd)
        except PluginProtocolError as exc:
            # the peer plugin reports which precondition broke in its error text
            if "RemoteUnknownVS" in str(exc):
                raise RemoteUnknownVS(remote_vs) from None
            raise RemoteUnreachable(str(exc)) from None

    # -- periodic jobs

    def _register_with_registry(self) -> None:
        body = {
            "node_id": self.config.node_id,
            "base_url": self.base_url,
            "descriptors": [d.to_jsonable()
                            for d in self.engine.descriptors(self.config.node_id)],
        }
        try:
            status, _ = http_json(
                "POST", f"{self.config.registry_url}/registry/sensors", body,
                timeout_s=5.0)
            if status != 200:
                log.warning("registry registration answered HTTP %d", status)
        except (URLError, OSError) as exc:
            log.warning("registry unreachable: %s", exc)

    def _sweep_plugins(self) -> None:
        self.plugin_registry.evict_unused(self.config.plugin_budget_bytes,
                                          self.clock.now_ms())

    # -- HTTP surface

    def _observe_request(self, method: str, path: str, status: int,
                         elapsed_ms: float) -> None:
        if method == "GET" and re.fullmatch(DATA_PATH_RE, path):
            self.l2_latency_ms.record(elapsed_ms)

    def _install_routes(self) -> None:
        s = self.server
        s.route("GET", r"/sensors", self._h_list_sensors)
        s.route("GET", r"/sensors/(?P<name>[^/]+)/data", self._h_pull_data)
        s.route("POST", r"/subscriptions", self._h_create_subscription)
        s.route("GET", r"/subscriptions", self._h_list_subscriptions)
        s.route("DELETE", r"/subscriptions/(?P<id>[^/]+)", self._h_delete_subscription)
        s.route("GET", r"/metrics", self._h_metrics)
        s.route("GET", r"/healthz", self._h_healthz)

    def _h_list_sensors(self, match, query, body):
        descriptors = self.engine.descriptors(self.config.node_id)
        return 200, [d.to_jsonable() for d in descriptors]

    def _h_pull_data(self, match, query, body):
        vs_name = match.group("name")
        mode = query.get("mode", "latest")
        try:
            store = self.engine.store_for(vs_name)
        except UnknownVirtualSensor:
            raise HttpApiError(404, "unknown_virtual_sensor", vs_name) from None
        window = _parse_window_param(query.get("window"))
        if mode == "latest":
            latest = store.latest()
            if latest is None:
                raise HttpApiError(404, "no_data", f"{vs_name} has no elements yet")
            return 200, {"timestamp": latest.timestamp,
                         "values": {f.name: v for f, v in
                                    zip(store.schema, latest.values)}}
        if mode == "raw":
            if window is None:
                window = WindowSpec("count", store.capacity)
            elements = store.query_raw(window, now=self.clock.now_ms())
            return 200, elements_to_jsonable(store.schema, elements)
        if mode == "processed":
            vsd = self.engine.vsd_for(vs_name)
            if window is None:
                window = vsd.window
            try:
                result = evaluate_window(store, window, vsd.aggregations,
                                         self.clock.now_ms())
            except MosdenError as exc:
                raise HttpApiError(400, "bad_window", str(exc)) from None
            return 200, result.to_jsonable()
        raise HttpApiError(400, "bad_mode",
                           f"mode must be latest|raw|processed, got {mode!r}")

    def _h_create_subscription(self, match, query, body):
        if not isinstance(body, dict):
            raise HttpApiError(400, "bad_request", "expected a JSON object body")
        for key in ("vs_name", "mode", "interval_ms", "expiry"):
            if key not in body:
                raise HttpApiError(400, "bad_request", f"missing key /{key}")
        try:
            sub = self.subscriptions.create(
                vs_name=body["vs_name"], mode=body["mode"],
                interval_ms=body["interval_ms"], expiry=body["expiry"],
                delivery_endpoint=body.get("delivery_endpoint"),
                payload_kind=body.get("payload_kind", "processed"),
                sub_id=body.get("id"))
        except UnknownVirtualSensor as exc:
            raise HttpApiError(404, "unknown_virtual_sensor", str(exc)) from None
        except MosdenError as exc:
            raise HttpApiError(400, "invalid_subscription", str(exc)) from None
        return 201, sub.to_jsonable()

    def _h_list_subscriptions(self, match, query, body):
        return 200, self.subscriptions.list_jsonable()

    def _h_delete_subscription(self, match, query, body):
        if self.subscriptions.cancel(match.group("id")):
            return 200, {"cancelled": True}
        raise HttpApiError(404, "unknown_subscription", match.group("id"))

    def _h_metrics(self, match, query, body):
        return 200, self.metrics_snapshot()

    def _h_healthz(self, match, query, body):
        return 200, {"status": "ok", "node_id": self.config.node_id,
                     "active_vs": len(self.engine.active_names()),
                     "subscriptions": len(self.subscriptions.list_jsonable())}

    def metrics_snapshot(self) -> dict[str, Any]:
        vs_stats = self.engine.stats_snapshot()
        sends = self.counters.snapshot()
        totals = {
            "samples_ok": sum(v["samples_ok"] for v in vs_stats.values()),
            "samples_dropped": sum(v["samples_dropped"] for v in vs_stats.values()),
            "read_errors": sum(v["read_errors"] for v in vs_stats.values()),
            "messages_sent": sends["messages_sent"],
            "bytes_sent": sends["bytes_sent"],
        }
        energy = account(totals, self.config.cost_model)
        return {
            "node_id": self.config.node_id,
            "vs": vs_stats,
            "subscriptions": self.subscriptions.metrics_snapshot(),
            "l2_latency_ms": self.l2_latency_ms.snapshot(),
            "messages_sent": sends["messages_sent"],
            "bytes_sent": sends["bytes_sent"],
            "totals": totals,
            "energy": energy.to_jsonable(),
            "plugin_evictions": self.plugin_registry.evicted_total,
            "activation_failures": dict(self._activation_failures),
        }


def _parse_window_param(raw: str | None) -> WindowSpec | None:
    if raw is None:
        return None
    kind, _, size_s = raw.partition(":")
    if kind not in ("count", "time"):
        raise HttpApiError(400, "bad_window",
                           f'window must be "count:N" or "time:MS", got {raw!r}')
    try:
        size = int(size_s)
    except ValueError:
        raise HttpApiError(400, "bad_window", f"bad window size {size_s!r}") from None
    try:
        return WindowSpec(kind, size)
    except MosdenError as exc:
        raise HttpApiError(400, "bad_window", str(exc)) from None
