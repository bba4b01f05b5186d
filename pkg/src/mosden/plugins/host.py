"""Plugin discovery, transports, lifecycle, and eviction.

One handle per bound virtual sensor drives one plugin instance through
set_configuration / get_data_structure / get_readings. The same plugin
logic can run in-process or as a subprocess speaking the stdio protocol;
the two are observationally equivalent for well-behaved plugins.

Fault policy: a timed-out or crashed plugin is restarted at most 3 times
with 1 s backoff (config and schema are re-delivered and the schema must
come back unchanged); a malformed reply from a live process is treated as
a plugin bug and fails the handle permanently. Already-stored elements are
never discarded by plugin failure.
"""

from __future__ import annotations

import json
import logging
import os
import queue
import shutil
import subprocess
import threading
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping

from ..clock import Clock, SystemClock
from ..model import (
    DataField,
    MosdenError,
    PluginBinding,
    SchemaError,
    StreamElement,
    TypeMismatch,
    canonical_json_bytes,
    parse_stream_element,
    schema_from_jsonable,
)
from .protocol import ACTION, OPS, PROTOCOL_VERSION, PluginError, PluginProgram

log = logging.getLogger(__name__)

__all__ = [
    "PluginManifest", "PluginHandle", "PluginRegistry", "discover_plugins",
    "UnknownPlugin", "PluginProtocolError", "PluginRejectedConfig",
    "PluginTimeout", "SchemaViolation", "PluginReportedError",
    "IllegalPluginState", "InProcessTransport", "SubprocessTransport",
    "DEFAULT_CALL_TIMEOUT_MS", "MAX_RESTARTS", "RESTART_BACKOFF_MS",
]

DEFAULT_CALL_TIMEOUT_MS = 5000
MAX_RESTARTS = 3
RESTART_BACKOFF_MS = 1000

MANIFEST_FILENAME = "plugin.json"

STATES = ("configured", "initialized", "running", "stopped", "failed")


class UnknownPlugin(MosdenError):
    """No manifest (or no in-process factory) for the requested plugin_id."""


class PluginProtocolError(MosdenError):
    """The plugin broke the wire contract (malformed reply, early exit)."""


class PluginRejectedConfig(MosdenError):
    """The plugin refused set_configuration, e.g. a required key is missing."""


class PluginTimeout(MosdenError):
    """No reply within the per-call deadline."""


class SchemaViolation(MosdenError):
    """A reading failed validation against the cached schema."""

    def __init__(self, message: str, violations=()):
        super().__init__(message)
        self.violations = list(violations)


class PluginReportedError(MosdenError):
    """The plugin answered {"ok":false} to a reading request.

    A soft failure: the instance stays running and the next tick retries
    (e.g. a peer plugin whose remote is momentarily unreachable).
    """


class IllegalPluginState(MosdenError):
    """Operation not legal in the handle's current state."""


@dataclass(frozen=True)
class PluginManifest:
    """Contents of plugin.json, or an in-code registration for builtins."""

    plugin_id: str
    version: str
    action: str
    size_bytes: int
    categories: tuple[str, ...] = ()
    command: tuple[str, ...] | None = None
    directory: str | None = None

    def to_jsonable(self) -> dict[str, Any]:
        doc: dict[str, Any] = {
            "plugin_id": self.plugin_id,
            "version": self.version,
            "action": self.action,
            "size_bytes": self.size_bytes,
            "categories": list(self.categories),
        }
        if self.command is not None:
            doc["command"] = list(self.command)
        return doc


def _parse_manifest(doc: Any, directory: str) -> PluginManifest:
    if not isinstance(doc, dict):
        raise SchemaError("manifest must be an object")
    for key in ("plugin_id", "version", "action"):
        if not isinstance(doc.get(key), str) or not doc.get(key):
            raise SchemaError(f"missing or non-string {key!r}", f"/{key}")
    if doc["action"] != ACTION:
        raise SchemaError(
            f"ActionMismatch: {doc['action']!r} != {ACTION!r}", "/action")
    size = doc.get("size_bytes")
    if not isinstance(size, int) or isinstance(size, bool) or size < 0:
        raise SchemaError("size_bytes must be a non-negative integer", "/size_bytes")
    categories = doc.get("categories", [])
    if not isinstance(categories, list) or not all(isinstance(c, str) for c in categories):
        raise SchemaError("categories must be a list of strings", "/categories")
    command = doc.get("command")
    if command is not None:
        if (not isinstance(command, list) or not command
                or not all(isinstance(c, str) for c in command)):
            raise SchemaError("command must be a non-empty list of strings", "/command")
        command = tuple(command)
    return PluginManifest(plugin_id=doc["plugin_id"], version=doc["version"],
                          action=doc["action"], size_bytes=size,
                          categories=tuple(categories), command=command,
                          directory=directory)


def discover_plugins(plugin_dir: str) -> list[PluginManifest]:
    """One manifest per subdirectory with a valid plugin.json.

    Bad manifests are warnings, never fatal; only an unreadable plugin_dir
    raises. Duplicate plugin_ids keep the first and warn on the rest.
    """
    manifests: list[PluginManifest] = []
    seen: set[str] = set()
    for entry in sorted(os.listdir(plugin_dir)):
        sub = os.path.join(plugin_dir, entry)
        path = os.path.join(sub, MANIFEST_FILENAME)
        if not os.path.isdir(sub) or not os.path.isfile(path):
            continue
        try:
            with open(path, "rb") as fh:
                manifest = _parse_manifest(json.load(fh), directory=sub)
        except (ValueError, SchemaError) as exc:
            log.warning("skipping plugin dir %s: %s", sub, exc)
            continue
        if manifest.plugin_id in seen:
            log.warning("skipping %s: duplicate plugin_id %r", sub, manifest.plugin_id)
            continue
        seen.add(manifest.plugin_id)
        manifests.append(manifest)
    return manifests


# --- Transports -----------------------------------------------------------


class InProcessTransport:
    """Drives a PluginProgram directly, but through the same JSON shapes
    the wire uses, so both transports observe identical values.

    Per-call timeouts are not enforced here (a stuck thread cannot be
    killed safely); timeout behavior is exercised over the subprocess
    transport.
    """

    def __init__(self, program: PluginProgram):
        self._program = program
        self.handshake = {
            "protocol": PROTOCOL_VERSION,
            "plugin_id": program.plugin_id,
            "version": program.version,
        }
        self._closed = False

    def request(self, op: str, payload: Mapping[str, Any] | None,
                timeout_ms: int) -> Any:
        if self._closed:
            raise PluginProtocolError("transport closed")
        if op not in OPS:
            raise PluginProtocolError(f"unknown op {op!r}")
        try:
            if op == "set_configuration":
                self._program.set_configuration(dict(payload or {}))
                result = None
            elif op == "get_data_structure":
                result = self._program.get_data_structure()
            else:
                result = self._program.get_readings()
        except PluginError as exc:
            return {"ok": False, "error": str(exc)}
        except Exception as exc:
            return {"ok": False, "error": f"internal: {exc}"}
        # round-trip through JSON: tuples become lists, floats normalize
        return {"ok": True, "result": json.loads(canonical_json_bytes(result))}

    def alive(self) -> bool:
        return not self._closed

    def close(self) -> None:
        self._closed = True


class SubprocessTransport:
    """Runs the plugin as a child process and speaks the stdio protocol.

    A reader thread feeds stdout lines to a queue so per-call timeouts work
    without platform-specific select on pipes. After any timeout the
    transport is poisoned: request/reply pairing can no longer be trusted.
    """

    def __init__(self, command: tuple[str, ...], cwd: str | None,
                 handshake_timeout_ms: int = DEFAULT_CALL_TIMEOUT_MS):
        try:
            self._proc = subprocess.Popen(
                list(command), cwd=cwd, stdin=subprocess.PIPE,
                stdout=subprocess.PIPE, stderr=subprocess.PIPE,
                text=True, encoding="utf-8", bufsize=1)
        except OSError as exc:
            raise PluginProtocolError(f"cannot launch {command!r}: {exc}") from None
        self._lines: queue.Queue = queue.Queue()
        self._poisoned = False
        threading.Thread(target=self._read_stdout, daemon=True).start()
        threading.Thread(target=self._drain_stderr, daemon=True).start()
        line = self._next_line(handshake_timeout_ms)
        try:
            self.handshake = json.loads(line)
        except ValueError:
            self.close()
            raise PluginProtocolError(f"bad handshake line: {line!r}") from None
        if self.handshake.get("protocol") != PROTOCOL_VERSION:
            self.close()
            raise PluginProtocolError(
                f"unsupported protocol {self.handshake.get('protocol')!r}")

    def _read_stdout(self) -> None:
        try:
            for line in self._proc.stdout:
                self._lines.put(line)
        except ValueError:
            pass
        self._lines.put(None)

    def _drain_stderr(self) -> None:
        try:
            for line in self._proc.stderr:
                log.debug("plugin stderr: %s", line.rstrip())
        except ValueError:
            pass

    def _next_line(self, timeout_ms: int) -> str:
        try:
            line = self._lines.get(timeout=timeout_ms / 1000.0)
        except queue.Empty:
            self._poisoned = True
            raise PluginTimeout(f"no reply within {timeout_ms} ms") from None
        if line is None:
            raise PluginProtocolError("plugin process closed its stdout")
        return line

    def request(self, op: str, payload: Mapping[str, Any] | None,
                timeout_ms: int) -> Any:
        if self._poisoned:
            raise PluginProtocolError("transport poisoned by an earlier timeout")
        msg: dict[str, Any] = {"op": op}
        if op == "set_configuration":
            msg["config"] = dict(payload or {})
        try:
            self._proc.stdin.write(canonical_json_bytes(msg).decode("utf-8") + "\n")
            self._proc.stdin.flush()
        except (OSError, ValueError) as exc:
            raise PluginProtocolError(f"plugin process gone: {exc}") from None
        line = self._next_line(timeout_ms)
        try:
            reply = json.loads(line)
        except ValueError:
            raise PluginProtocolError(f"malformed reply: {line.strip()!r}") from None
        if not isinstance(reply, dict) or "ok" not in reply:
            raise PluginProtocolError(f"malformed reply: {reply!r}")
        return reply

    def alive(self) -> bool:
        return not self._poisoned and self._proc.poll() is None

    def close(self) -> None:
        for stream in (self._proc.stdin,):
            try:
                stream.close()
            except OSError:
                pass
        self._proc.terminate()
        try:
            self._proc.wait(timeout=2)
        except subprocess.TimeoutExpired:
            self._proc.kill()
            self._proc.wait()


# --- Handle ----------------------------------------------------------------


class PluginHandle:
    """State machine around one plugin instance.

    Legal transitions: configured -> initialized -> running -> stopped, and
    any -> failed. get_readings is only legal while running. The schema is
    immutable once populated; a restarted plugin must report it unchanged.
    """

    def __init__(self, manifest: PluginManifest, binding: PluginBinding,
                 transport_factory: Callable[[], Any], clock: Clock | None = None,
                 call_timeout_ms: int = DEFAULT_CALL_TIMEOUT_MS,
                 max_restarts: int = MAX_RESTARTS,
                 restart_backoff_ms: int = RESTART_BACKOFF_MS,
                 on_used: Callable[[], None] | None = None):
        self.manifest = manifest
        self.binding = binding
        self.clock = clock if clock is not None else SystemClock()
        self.call_timeout_ms = call_timeout_ms
        self.max_restarts = max_restarts
        self.restart_backoff_ms = restart_backoff_ms
        self.state = "configured"
        self.schema: tuple[DataField, ...] | None = None
        self.last_used = self.clock.now_ms()
        self.restarts_done = 0
        self._transport_factory = transport_factory
        self._transport = None
        self._config: dict[str, str] = {}
        self._config_delivered = False
        self._on_used = on_used
        self._lock = threading.RLock()

    # -- state helpers

    def _require_state(self, *allowed: str) -> None:
        if self.state not in allowed:
            raise IllegalPluginState(
                f"{self.manifest.plugin_id}: {self.state}, expected one of {allowed}")

    def _fail(self, why: str) -> None:
        log.warning("plugin %s failed: %s", self.manifest.plugin_id, why)
        self.state = "failed"
        self._close_transport()

    def _close_transport(self) -> None:
        if self._transport is not None:
            try:
                self._transport.close()
            finally:
                self._transport = None

    def _ensure_transport(self):
        if self._transport is None:
            self._transport = self._transport_factory()
            got = self._transport.handshake.get("plugin_id")
            if got != self.manifest.plugin_id:
                self._fail(f"handshake plugin_id {got!r} != manifest")
                raise PluginProtocolError(
                    f"handshake plugin_id {got!r} != {self.manifest.plugin_id!r}")
        return self._transport

    def _touch(self) -> None:
        self.last_used = self.clock.now_ms()
        if self._on_used is not None:
            self._on_used()

    # -- the three-call contract

    def set_configuration(self, config: Mapping[str, str]) -> None:
        with self._lock:
            self._require_state("configured", "initialized")
            reply = self._request("set_configuration", dict(config))
            if not reply.get("ok"):
                raise PluginRejectedConfig(str(reply.get("error", "rejected")))
            self._config = dict(config)
            self._config_delivered = True
            self._touch()

    def get_data_structure(self) -> tuple[DataField, ...]:
        with self._lock:
            if self.schema is not None:
                return self.schema
            self._require_state("configured", "initialized")
            if not self._config_delivered:
                raise IllegalPluginState("configuration not delivered yet")
            reply = self._request("get_data_structure", None)
            if not reply.get("ok"):
                self._fail(f"schema call rejected: {reply.get('error')}")
                raise PluginProtocolError(str(reply.get("error", "rejected")))
            try:
                schema = tuple(schema_from_jsonable(reply.get("result")))
            except SchemaError as exc:
                self._fail(f"bad schema: {exc}")
                raise PluginProtocolError(f"bad schema: {exc}") from None
            self.schema = schema
            self.state = "initialized"
            self._touch()
            return schema

    def start(self) -> None:
        with self._lock:
            self._require_state("initialized")
            self.state = "running"

    def get_readings(self) -> StreamElement | None:
        with self._lock:
            self._require_state("running")
            reply = self._request("get_readings", None, restartable=True)
            if not reply.get("ok"):
                raise PluginReportedError(str(reply.get("error", "error")))
            result = reply.get("result")
            if result is None:
                self._touch()
                return None
            try:
                element = parse_stream_element(self.schema, result)
            except (SchemaError, TypeMismatch) as exc:
                raise SchemaViolation(str(exc),
                                      getattr(exc, "violations", ())) from None
            self._touch()
            return element

    def stop(self) -> None:
        with self._lock:
            if self.state == "stopped":
                return
            self._require_state("running")
            self.state = "stopped"
            self._close_transport()

    def close(self) -> None:
        """Release the transport without a state claim (cleanup path)."""
        with self._lock:
            self._close_transport()

    # -- transport plumbing and restart policy

    def _request(self, op: str, payload, restartable: bool = False) -> Any:
        try:
            transport = self._ensure_transport()
            return transport.request(op, payload, self.call_timeout_ms)
        except PluginTimeout as exc:
            if restartable:
                self._restart_or_fail(f"timeout: {exc}")
            else:
                self._fail(f"timeout: {exc}")
            raise
        except PluginProtocolError as exc:
            if restartable and not self._transport_alive():
                self._restart_or_fail(f"process died: {exc}")
            else:
                self._fail(str(exc))
            raise

    def _transport_alive(self) -> bool:
        return self._transport is not None and self._transport.alive()

    def _restart_or_fail(self, why: str) -> None:
        """Relaunch and re-initialize in place, keeping the running state.

        The current call still fails; the next one hits the fresh instance.
        """
        self._close_transport()
        while self.restarts_done < self.max_restarts:
            self.restarts_done += 1
            log.warning("restarting plugin %s (%d/%d) after %s",
                        self.manifest.plugin_id, self.restarts_done,
                        self.max_restarts, why)
            self.clock.sleep(self.restart_backoff_ms)
            try:
                transport = self._ensure_transport()
                reply = transport.request("set_configuration", self._config,
                                          self.call_timeout_ms)
                if not reply.get("ok"):
                    raise PluginProtocolError(
                        f"config rejected on restart: {reply.get('error')}")
                reply = transport.request("get_data_structure", None,
                                          self.call_timeout_ms)
                if not reply.get("ok"):
                    raise PluginProtocolError(
                        f"schema rejected on restart: {reply.get('error')}")
                schema = tuple(schema_from_jsonable(reply.get("result")))
                if self.schema is not None and schema != self.schema:
                    self._fail("schema changed across restart")
                    return
                return
            except (PluginTimeout, PluginProtocolError, SchemaError) as exc:
                log.warning("restart %d of plugin %s failed: %s",
                            self.restarts_done, self.manifest.plugin_id, exc)
                self._close_transport()
        self._fail(f"gave up after {self.max_restarts} restarts ({why})")


# --- Registry ---------------------------------------------------------------


@dataclass
class _PluginRecord:
    manifest: PluginManifest
    factory: Callable[..., PluginProgram] | None = None
    last_used: int = 0
    bound_vs: set = field(default_factory=set)


class PluginRegistry:
    """Manifest table plus LRU metadata and active-binding protection.

    Shared between the engine (binding/unbinding) and the eviction sweep;
    all access goes through one lock.
    """

    def __init__(self, clock: Clock | None = None,
                 call_timeout_ms: int = DEFAULT_CALL_TIMEOUT_MS,
                 restart_backoff_ms: int = RESTART_BACKOFF_MS):
        self.clock = clock if clock is not None else SystemClock()
        self.call_timeout_ms = call_timeout_ms
        self.restart_backoff_ms = restart_backoff_ms
        self._records: dict[str, _PluginRecord] = {}
        self._lock = threading.RLock()
        self.evicted_total = 0

    def discover(self, plugin_dir: str) -> list[PluginManifest]:
        found = discover_plugins(plugin_dir)
        with self._lock:
            for manifest in found:
                if manifest.plugin_id in self._records:
                    continue
                self._records[manifest.plugin_id] = _PluginRecord(manifest)
        return found

    def register_builtin(self, manifest: PluginManifest,
                         factory: Callable[..., PluginProgram]) -> None:
        with self._lock:
            self._records[manifest.plugin_id] = _PluginRecord(manifest, factory)

    def manifests(self) -> list[PluginManifest]:
        with self._lock:
            return [r.manifest for r in self._records.values()]

    def get(self, plugin_id: str) -> PluginManifest:
        with self._lock:
            record = self._records.get(plugin_id)
            if record is None:
                raise UnknownPlugin(plugin_id)
            return record.manifest

    def create_handle(self, binding: PluginBinding, vs_name: str | None = None,
                      host_clock: Clock | None = None) -> PluginHandle:
        """Build a handle for the binding; binds vs_name for LRU protection."""
        with self._lock:
            record = self._records.get(binding.plugin_id)
            if record is None:
                raise UnknownPlugin(binding.plugin_id)
            manifest = record.manifest
            if binding.transport == "in_process":
                factory = record.factory
                if factory is None:
                    raise UnknownPlugin(
                        f"{binding.plugin_id}: no in-process implementation")
                program_clock = host_clock if host_clock is not None else self.clock

                def transport_factory():
                    return InProcessTransport(factory(clock=program_clock))
            else:
                command = binding.command or manifest.command
                if not command:
                    raise UnknownPlugin(f"{binding.plugin_id}: no command to launch")
                cwd = manifest.directory

                def transport_factory():
                    return SubprocessTransport(tuple(command), cwd,
                                               self.call_timeout_ms)
            if vs_name is not None:
                record.bound_vs.add(vs_name)

            def on_used(plugin_id=binding.plugin_id):
                self.touch(plugin_id)

        return PluginHandle(manifest, binding, transport_factory,
                            clock=self.clock, call_timeout_ms=self.call_timeout_ms,
                            restart_backoff_ms=self.restart_backoff_ms,
                            on_used=on_used)

    def release(self, binding_plugin_id: str, vs_name: str) -> None:
        with self._lock:
            record = self._records.get(binding_plugin_id)
            if record is not None:
                record.bound_vs.discard(vs_name)

    def touch(self, plugin_id: str) -> None:
        with self._lock:
            record = self._records.get(plugin_id)
            if record is not None:
                record.last_used = self.clock.now_ms()

    def active_plugin_ids(self) -> set:
        with self._lock:
            return {pid for pid, r in self._records.items() if r.bound_vs}

    def evict_unused(self, budget_bytes: int, now: int | None = None) -> list[str]:
        """LRU-evict idle plugins while their total size exceeds the budget.

        Plugins bound to an active virtual sensor are never candidates. An
        evicted plugin's directory is removed best-effort; failures are
        logged, the table entry goes away regardless.
        """
        evicted: list[str] = []
        doomed: list[PluginManifest] = []
        with self._lock:
            idle = [r for r in self._records.values() if not r.bound_vs]
            total = sum(r.manifest.size_bytes for r in idle)
            idle.sort(key=lambda r: (r.last_used, r.manifest.plugin_id))
            while total > budget_bytes and idle:
                victim = idle.pop(0)
                total -= victim.manifest.size_bytes
                del self._records[victim.manifest.plugin_id]
                evicted.append(victim.manifest.plugin_id)
                doomed.append(victim.manifest)
                self.evicted_total += 1
        for manifest in doomed:
            if manifest.directory and os.path.isdir(manifest.directory):
                try:
                    shutil.rmtree(manifest.directory)
                except OSError as exc:
                    log.warning("could not remove %s: %s", manifest.directory, exc)
        if evicted:
            log.info("evicted unused plugins: %s", ", ".join(evicted))
        return evicted
