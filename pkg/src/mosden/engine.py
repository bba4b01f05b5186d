"""The generic wrapper: one sampling loop per virtual sensor.

Activation wires plugin -> store: configure, fetch schema, check the
aggregation fields, then sample at the VSD's interval. Each reading is
validated before it is stored; L1 latency (read start to store append) is
recorded per sample on the monotonic clock. Tasks are isolated: one
plugin failing, stalling, or being deactivated never perturbs another
task's counters or store.
"""

from __future__ import annotations

import logging
import os
import threading
from dataclasses import dataclass, field
from typing import Any, Callable

from .clock import Clock, SystemClock, TaskHandle
from .metrics import LatencyHistogram
from .model import (
    MosdenError,
    SensorDescriptor,
    VirtualSensorDefinition,
)
from .plugins.host import (
    PluginHandle,
    PluginProtocolError,
    PluginRegistry,
    PluginReportedError,
    PluginTimeout,
    SchemaViolation,
)
from .store import (
    FieldNotInSchema,
    OutOfOrderTimestamp,
    StreamStore,
    WindowResult,
    check_aggregations_against_schema,
    emit_tick,
)

log = logging.getLogger(__name__)

__all__ = ["Engine", "SamplingTask", "IngestStats",
           "UnknownVirtualSensor", "DuplicateVirtualSensor", "FieldNotInSchema"]


class UnknownVirtualSensor(MosdenError):
    pass


class DuplicateVirtualSensor(MosdenError):
    pass


class IngestStats:
    """Counters for one sampling task; monotonically non-decreasing."""

    def __init__(self):
        self._lock = threading.Lock()
        self.samples_ok = 0
        self.samples_dropped = 0
        self.read_errors = 0
        self.samples_empty = 0
        self.l1_latency_ms = LatencyHistogram()

    def snapshot(self) -> dict[str, Any]:
        with self._lock:
            return {
                "samples_ok": self.samples_ok,
                "samples_dropped": self.samples_dropped,
                "read_errors": self.read_errors,
                "samples_empty": self.samples_empty,
                "l1_latency_ms": self.l1_latency_ms.snapshot(),
            }

    def incr(self, name: str) -> None:
        with self._lock:
            setattr(self, name, getattr(self, name) + 1)


@dataclass
class SamplingTask:
    vs_name: str
    vsd: VirtualSensorDefinition
    handle: PluginHandle
    interval_ms: int
    store: StreamStore
    stats: IngestStats = field(default_factory=IngestStats)
    task: TaskHandle | None = None
    failed_logged: bool = False


class Engine:
    """Owns all sampling tasks and their stores on one node."""

    def __init__(self, registry: PluginRegistry, clock: Clock | None = None,
                 data_dir: str | None = None,
                 on_deactivate: Callable[[str], None] | None = None):
        self.registry = registry
        self.clock = clock if clock is not None else SystemClock()
        self.data_dir = data_dir
        self.on_deactivate = on_deactivate
        self._tasks: dict[str, SamplingTask] = {}
        self._retired_stores: dict[str, StreamStore] = {}
        self._retired_vsds: dict[str, VirtualSensorDefinition] = {}
        self._lock = threading.RLock()

    # -- lifecycle

    def activate(self, vsd: VirtualSensorDefinition) -> SamplingTask:
        with self._lock:
            if vsd.name in self._tasks:
                raise DuplicateVirtualSensor(vsd.name)
        handle = self.registry.create_handle(vsd.binding, vs_name=vsd.name,
                                             host_clock=self.clock)
        try:
            handle.set_configuration(vsd.binding.config)
            schema = handle.get_data_structure()
            check_aggregations_against_schema(vsd.aggregations, schema)
            journal = None
            if self.data_dir:
                journal = os.path.join(self.data_dir, f"{vsd.name}.jsonl")
            with self._lock:
                store = self._retired_stores.pop(vsd.name, None)
                self._retired_vsds.pop(vsd.name, None)
            if store is None or store.schema != tuple(schema):
                store = StreamStore(vsd.name, schema, vsd.history_size,
                                    journal_path=journal)
            handle.start()
        except MosdenError:
            handle.close()
            self.registry.release(vsd.binding.plugin_id, vsd.name)
            raise
        task = SamplingTask(vs_name=vsd.name, vsd=vsd, handle=handle,
                            interval_ms=vsd.sampling_interval_ms, store=store)
        with self._lock:
            if vsd.name in self._tasks:
                handle.stop()
                self.registry.release(vsd.binding.plugin_id, vsd.name)
                raise DuplicateVirtualSensor(vsd.name)
            self._tasks[vsd.name] = task
        task.task = self.clock.schedule_periodic(
            f"sample-{vsd.name}", vsd.sampling_interval_ms,
            lambda: self.sample_once(task))
        log.info("activated %s (plugin %s, %d ms)", vsd.name,
                 vsd.binding.plugin_id, vsd.sampling_interval_ms)
        return task

    def sample_once(self, task: SamplingTask) -> str:
        """One tick: read, validate, store. Returns what happened."""
        if task.handle.state == "failed":
            if not task.failed_logged:
                log.error("plugin for %s failed permanently; sampling stops",
                          task.vs_name)
                task.failed_logged = True
            if task.task is not None:
                task.task.cancel()
            return "failed"
        started = self.clock.mono_ms()
        try:
            element = task.handle.get_readings()
        except SchemaViolation as exc:
            task.stats.incr("samples_dropped")
            log.warning("dropped reading on %s: %s", task.vs_name, exc)
            return "dropped"
        except PluginReportedError as exc:
            task.stats.incr("read_errors")
            log.warning("plugin error on %s: %s", task.vs_name, exc)
            return "error"
        except (PluginTimeout, PluginProtocolError) as exc:
            task.stats.incr("read_errors")
            log.warning("read failed on %s: %s", task.vs_name, exc)
            return "error"
        if element is None:
            task.stats.incr("samples_empty")
            return "empty"
        try:
            task.store.append(element)
        except OutOfOrderTimestamp as exc:
            task.stats.incr("samples_dropped")
            log.warning("out-of-order reading on %s: %s", task.vs_name, exc)
            return "dropped"
        task.stats.l1_latency_ms.record(self.clock.mono_ms() - started)
        task.stats.incr("samples_ok")
        return "stored"

    def deactivate(self, vs_name: str) -> None:
        with self._lock:
            task = self._tasks.pop(vs_name, None)
            if task is None:
                raise UnknownVirtualSensor(vs_name)
            self._retired_stores[vs_name] = task.store
            self._retired_vsds[vs_name] = task.vsd
        if task.task is not None:
            task.task.cancel()
        try:
            if task.handle.state == "running":
                task.handle.stop()
            else:
                task.handle.close()
        except MosdenError as exc:
            log.warning("stopping plugin for %s: %s", vs_name, exc)
        self.registry.release(task.vsd.binding.plugin_id, vs_name)
        if self.on_deactivate is not None:
            self.on_deactivate(vs_name)
        log.info("deactivated %s", vs_name)

    def shutdown(self) -> None:
        for vs_name in list(self._tasks):
            try:
                self.deactivate(vs_name)
            except UnknownVirtualSensor:
                pass
        for store in self._retired_stores.values():
            store.close()

    # -- read surface

    def task_for(self, vs_name: str) -> SamplingTask:
        with self._lock:
            task = self._tasks.get(vs_name)
        if task is None:
            raise UnknownVirtualSensor(vs_name)
        return task

    def store_for(self, vs_name: str) -> StreamStore:
        """Active task's store, or a retired store kept after deactivate."""
        with self._lock:
            task = self._tasks.get(vs_name)
            if task is not None:
                return task.store
            store = self._retired_stores.get(vs_name)
        if store is None:
            raise UnknownVirtualSensor(vs_name)
        return store

    def vsd_for(self, vs_name: str) -> VirtualSensorDefinition:
        """Definition of an active VS, or of a retired one (pulls still work)."""
        with self._lock:
            task = self._tasks.get(vs_name)
            if task is not None:
                return task.vsd
            vsd = self._retired_vsds.get(vs_name)
        if vsd is None:
            raise UnknownVirtualSensor(vs_name)
        return vsd

    def active_names(self) -> list[str]:
        with self._lock:
            return sorted(self._tasks)

    def emit(self, vs_name: str) -> WindowResult:
        """The VSD's own window/aggregations evaluated at clock-now."""
        task = self.task_for(vs_name)
        return emit_tick(task.vsd, task.store, self.clock.now_ms())

    def descriptor(self, node_id: str, vs_name: str) -> SensorDescriptor:
        task = self.task_for(vs_name)
        metadata = {k[len("meta_"):]: v
                    for k, v in task.vsd.binding.config.items()
                    if k.startswith("meta_")}
        if task.store.schema and task.store.schema[0].unit:
            metadata.setdefault("unit", task.store.schema[0].unit)
        return SensorDescriptor(node_id=node_id, vs_name=vs_name,
                                schema=task.store.schema, metadata=metadata,
                                registered_at=self.clock.now_ms())

    def descriptors(self, node_id: str) -> list[SensorDescriptor]:
        return [self.descriptor(node_id, name) for name in self.active_names()]

    def stats_snapshot(self) -> dict[str, Any]:
        with self._lock:
            tasks = list(self._tasks.values())
        return {t.vs_name: t.stats.snapshot() for t in tasks}
