"""Experiment runner: scaling sweeps over sensor count or query count.

Each scenario point boots a fresh in-process registry + node pair on
loopback, applies the load for the configured duration, and collects one
CSV row from /metrics. With ``"clock": "mock"`` the whole run is driven by
a manually stepped clock and deterministic sensor profiles, so the
counting columns (samples_ok, messages_sent, bytes_sent) are identical
across repeated runs; ``"clock": "real"`` runs wall time.

Scenario JSON:
    {"axis": "sensors"|"queries", "points": [1,5,13], "duration_s": 60,
     "sampling_ms": 1000, "emit_ms": 1000?, "cost_model": {...},
     "clock": "mock"|"real", "seed": 42}

The sensors axis activates N virtual sensors and no subscriptions; the
queries axis activates 13 virtual sensors and dispatches N user requests
(one push subscription each, round-robin over the sensors) through the
registry.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import os
import tempfile
import time
from dataclasses import dataclass
from typing import Any

from .clock import Clock, MockClock, SystemClock
from .model import (
    Aggregation,
    CostParameters,
    MosdenError,
    PluginBinding,
    VirtualSensorDefinition,
    WindowSpec,
)
from .node import Node, NodeConfig
from .offload import decide
from .plugins.sim import SIM_PLUGIN_ID
from .registry import Registry
from .httpd import http_json

log = logging.getLogger(__name__)

__all__ = ["Scenario", "ScenarioError", "run_bench", "run_point",
           "emit_report", "CSV_HEADER"]

CSV_HEADER = ("point", "samples_ok", "messages_sent", "bytes_sent",
              "l1_mean_ms", "l1_p95_ms", "l2_mean_ms", "l2_p95_ms",
              "e_alpha_realized", "e_beta_realized", "wall_cpu_ms", "status")

SENSORS_AT_TOP_LOAD = 13
PROBE_INTERVAL_MS = 500


class ScenarioError(MosdenError):
    pass


@dataclass(frozen=True)
class Scenario:
    axis: str
    points: tuple[int, ...]
    duration_s: float
    sampling_ms: int
    cost_model: CostParameters
    emit_ms: int
    clock: str = "mock"
    seed: int = 0

    @classmethod
    def from_jsonable(cls, doc: Any) -> "Scenario":
        if not isinstance(doc, dict):
            raise ScenarioError("scenario must be a JSON object")
        axis = doc.get("axis")
        if axis not in ("sensors", "queries"):
            raise ScenarioError(f'axis must be "sensors" or "queries", got {axis!r}')
        points = doc.get("points")
        if (not isinstance(points, list) or not points
                or not all(isinstance(p, int) and p >= 1 for p in points)):
            raise ScenarioError("points must be a non-empty list of positive ints")
        duration_s = doc.get("duration_s")
        if not isinstance(duration_s, (int, float)) or duration_s <= 0:
            raise ScenarioError("duration_s must be a positive number")
        sampling_ms = doc.get("sampling_ms", 1000)
        if not isinstance(sampling_ms, int) or sampling_ms < 1:
            raise ScenarioError("sampling_ms must be a positive integer")
        emit_ms = doc.get("emit_ms", sampling_ms)
        if not isinstance(emit_ms, int) or emit_ms < sampling_ms:
            raise ScenarioError("emit_ms must be an integer >= sampling_ms")
        clock = doc.get("clock", "mock")
        if clock not in ("mock", "real"):
            raise ScenarioError(f'clock must be "mock" or "real", got {clock!r}')
        try:
            cost_model = CostParameters.from_jsonable(doc.get("cost_model", {}))
        except MosdenError as exc:
            raise ScenarioError(f"bad cost_model: {exc}") from None
        return cls(axis=axis, points=tuple(points), duration_s=float(duration_s),
                   sampling_ms=sampling_ms, cost_model=cost_model,
                   emit_ms=emit_ms, clock=clock, seed=int(doc.get("seed", 0)))

    @classmethod
    def from_file(cls, path: str) -> "Scenario":
        try:
            with open(path, encoding="utf-8") as fh:
                return cls.from_jsonable(json.load(fh))
        except OSError as exc:
            raise ScenarioError(f"cannot read scenario: {exc}") from None
        except ValueError as exc:
            raise ScenarioError(f"scenario is not JSON: {exc}") from None


def _bench_vsd(index: int, scenario: Scenario) -> VirtualSensorDefinition:
    name = f"bench_vs_{index:02d}"
    config = {
        "kind": "ramp",
        "seed": str(scenario.seed + index),
        "offset": str(float(index)),
        "tick_ms": str(scenario.sampling_ms),
        "clock": "logical" if scenario.clock == "mock" else "wall",
        "meta_type": "temperature",
        "meta_vs": name,
    }
    return VirtualSensorDefinition(
        name=name,
        binding=PluginBinding(plugin_id=SIM_PLUGIN_ID, transport="in_process",
                              config=config),
        window=WindowSpec("count", max(1, scenario.emit_ms // scenario.sampling_ms)),
        aggregations=(Aggregation("temp", "avg"), Aggregation("temp", "count")),
        emit_interval_ms=scenario.emit_ms,
        history_size=4096,
        sampling_interval_ms=scenario.sampling_ms)


def run_point(scenario: Scenario, point: int, workdir: str,
              clock: Clock | None = None) -> dict[str, Any]:
    """One fresh node+registry run; returns the CSV row as a dict."""
    own_clock = clock
    if own_clock is None:
        own_clock = MockClock() if scenario.clock == "mock" else SystemClock()
    registry_dir = os.path.join(workdir, f"registry_{point}")
    node_dir = os.path.join(workdir, f"node_{point}")
    plugin_dir = os.path.join(workdir, "plugins")
    os.makedirs(registry_dir, exist_ok=True)
    os.makedirs(node_dir, exist_ok=True)
    os.makedirs(plugin_dir, exist_ok=True)

    registry = Registry(registry_dir, clock=own_clock)
    registry.start()
    node = None
    cpu_start = time.process_time()
    try:
        config = NodeConfig(
            node_id="bench", host="127.0.0.1", port=0, plugin_dir=plugin_dir,
            data_dir=node_dir, cost_model=scenario.cost_model,
            registry_url=registry.base_url, journal=False)
        node = Node(config, clock=own_clock)
        node.start()

        n_sensors = point if scenario.axis == "sensors" else SENSORS_AT_TOP_LOAD
        vsds = [_bench_vsd(i, scenario) for i in range(n_sensors)]
        for vsd in vsds:
            node.activate(vsd)
        node._register_with_registry()

        if scenario.axis == "queries":
            duration_ms = int(scenario.duration_s * 1000)
            for q in range(point):
                target = vsds[q % n_sensors]
                status, reply = http_json(
                    "POST", f"{registry.base_url}/registry/requests",
                    {"id": f"req-{q + 1}",
                     "criteria": {"vs": target.name},
                     "window": {"kind": target.window.kind,
                                "size": target.window.size},
                     "aggregations": [{"field": "temp", "fn": "avg"}],
                     "interval_ms": scenario.emit_ms,
                     "duration_ms": duration_ms})
                if status != 200 or (isinstance(reply, dict) and reply.get("failures")):
                    raise ScenarioError(
                        f"dispatch {q + 1} failed: HTTP {status} {reply}")

        probe_url = f"{node.base_url}/sensors/{vsds[0].name}/data?mode=latest"

        def probe() -> None:
            try:
                http_json("GET", probe_url, timeout_s=5.0)
            except OSError:
                pass

        prober = own_clock.schedule_periodic("bench-probe", PROBE_INTERVAL_MS, probe)
        duration_ms = int(scenario.duration_s * 1000)
        if isinstance(own_clock, MockClock):
            own_clock.advance(duration_ms)
        else:
            time.sleep(scenario.duration_s)
        prober.cancel()

        snapshot = node.metrics_snapshot()
        cpu_ms = (time.process_time() - cpu_start) * 1000.0
        totals = snapshot["totals"]
        l1 = _merge_l1(snapshot["vs"])
        l2 = snapshot["l2_latency_ms"]
        energy = snapshot["energy"]
        return {
            "point": point,
            "samples_ok": totals["samples_ok"],
            "messages_sent": totals["messages_sent"],
            "bytes_sent": totals["bytes_sent"],
            "l1_mean_ms": round(l1["mean"], 3),
            "l1_p95_ms": round(l1["p95"], 3),
            "l2_mean_ms": round(l2["mean"], 3),
            "l2_p95_ms": round(l2["p95"], 3),
            "e_alpha_realized": round(energy["e_alpha"], 6),
            "e_beta_realized": round(energy["e_beta"], 6),
            "wall_cpu_ms": round(cpu_ms, 1),
            "status": "ok",
        }
    finally:
        if node is not None:
            node.stop()
        registry.stop()


def _merge_l1(vs_stats: dict[str, Any]) -> dict[str, float]:
    count = sum(s["l1_latency_ms"]["count"] for s in vs_stats.values())
    if count == 0:
        return {"mean": 0.0, "p95": 0.0}
    mean = sum(s["l1_latency_ms"]["mean"] * s["l1_latency_ms"]["count"]
               for s in vs_stats.values()) / count
    p95 = max(s["l1_latency_ms"]["p95"] for s in vs_stats.values())
    return {"mean": mean, "p95": p95}


def run_bench(scenario: Scenario, out_path: str,
              workdir: str | None = None) -> list[dict[str, Any]]:
    rows = []
    own_workdir = workdir or tempfile.mkdtemp(prefix="mosden-bench-")
    for point in scenario.points:
        try:
            row = run_point(scenario, point, own_workdir)
        except Exception as exc:
            log.exception("bench point %d failed", point)
            row = {k: 0 for k in CSV_HEADER}
            row["point"] = point
            row["status"] = f"error: {exc}"
        rows.append(row)
    csv_text, summary = emit_report(rows, scenario)
    with open(out_path, "w", encoding="utf-8", newline="") as fh:
        fh.write(csv_text)
    print(summary)
    return rows


def emit_report(rows: list[dict[str, Any]],
                scenario: Scenario | None = None) -> tuple[str, str]:
    """(CSV text with the fixed header, human summary with verdicts)."""
    if not rows:
        raise ScenarioError("no rows to report")
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(CSV_HEADER), lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: row.get(k, "") for k in CSV_HEADER})
    lines = ["all components on loopback; no network variability modeled",
             "CPU is process CPU-time ms, not a platform tick unit"]
    if scenario is not None:
        lines.append(f"axis={scenario.axis} duration_s={scenario.duration_s} "
                     f"sampling_ms={scenario.sampling_ms} clock={scenario.clock}")
    for row in rows:
        verdict = decide(float(row["e_alpha_realized"] or 0),
                         float(row["e_beta_realized"] or 0))
        lines.append(
            f"point {row['point']}: status={row['status']} "
            f"samples_ok={row['samples_ok']} messages={row['messages_sent']} "
            f"bytes={row['bytes_sent']} e_alpha={row['e_alpha_realized']} "
            f"e_beta={row['e_beta_realized']} verdict={verdict}")
    return buf.getvalue(), "\n".join(lines)
