"""Conformance checks for plugin implementations.

A subject describes how to build fresh handles for one plugin (in-process
or subprocess, any implementation language). ``run_conformance`` drives the
full three-call contract plus every documented error path through that
subject and reports one row per check, so the same suite validates the
built-in reference plugin and any external plugin binary unchanged.

Byte-level stream comparison (``canonical_stream``/``streams_equal``) is
meaningful for profiles whose arithmetic is exact in IEEE 754 doubles
(constant, ramp with integer-representable offsets). Transcendental or
RNG-based profiles may differ across language runtimes in the last ulp.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Callable

from ..clock import SystemClock
from ..model import DataField, PluginBinding, serialize_stream_element
from .host import (
    IllegalPluginState,
    PluginHandle,
    PluginManifest,
    PluginRejectedConfig,
    PluginTimeout,
    SchemaViolation,
    InProcessTransport,
    SubprocessTransport,
)
from .protocol import PluginProgram
from .sim import SIM_SCHEMA

log = logging.getLogger(__name__)

__all__ = ["CheckResult", "ConformanceSubject", "in_process_subject",
           "subprocess_subject", "run_conformance", "canonical_stream",
           "streams_equal", "summarize"]

DEFAULT_PROFILE = {"kind": "ramp", "seed": "20", "offset": "3.0",
                   "tick_ms": "1000", "clock": "logical"}


@dataclass
class CheckResult:
    name: str
    status: str  # "pass" | "fail" | "skip"
    detail: str = ""


@dataclass
class ConformanceSubject:
    """How to obtain fresh handles for the plugin under test."""

    label: str
    make_handle: Callable[[], PluginHandle]
    # in-process transports cannot interrupt a stuck call, so timeout and
    # restart checks only apply where the transport enforces deadlines
    supports_timeout: bool = True
    expected_schema: tuple[DataField, ...] = field(default=SIM_SCHEMA)


def in_process_subject(label: str,
                       program_factory: Callable[[], PluginProgram],
                       manifest: PluginManifest,
                       expected_schema: tuple[DataField, ...] = SIM_SCHEMA,
                       ) -> ConformanceSubject:
    binding = PluginBinding(plugin_id=manifest.plugin_id,
                            transport="in_process", config={})

    def make_handle() -> PluginHandle:
        return PluginHandle(
            manifest, binding,
            transport_factory=lambda: InProcessTransport(program_factory()),
            clock=SystemClock())

    return ConformanceSubject(label, make_handle, supports_timeout=False,
                              expected_schema=expected_schema)


def subprocess_subject(label: str, manifest: PluginManifest,
                       call_timeout_ms: int = 500,
                       restart_backoff_ms: int = 100,
                       handshake_timeout_ms: int = 10_000,
                       expected_schema: tuple[DataField, ...] = SIM_SCHEMA,
                       ) -> ConformanceSubject:
    if not manifest.command:
        raise ValueError(f"manifest {manifest.plugin_id} has no command")
    binding = PluginBinding(plugin_id=manifest.plugin_id,
                            transport="subprocess",
                            command=tuple(manifest.command), config={})

    def make_handle() -> PluginHandle:
        return PluginHandle(
            manifest, binding,
            transport_factory=lambda: SubprocessTransport(
                tuple(manifest.command), manifest.directory,
                handshake_timeout_ms=handshake_timeout_ms),
            clock=SystemClock(),
            call_timeout_ms=call_timeout_ms,
            restart_backoff_ms=restart_backoff_ms)

    return ConformanceSubject(label, make_handle,
                              expected_schema=expected_schema)


# --- individual checks -------------------------------------------------------


def _with_handle(subject: ConformanceSubject, fn) -> CheckResult:
    handle = subject.make_handle()
    try:
        return fn(handle)
    finally:
        handle.close()


def _configured(handle: PluginHandle, config: dict[str, str]) -> None:
    handle.set_configuration(config)
    handle.get_data_structure()
    handle.start()


def _check_handshake(subject: ConformanceSubject,
                     profile: dict[str, str]) -> CheckResult:
    def fn(handle: PluginHandle) -> CheckResult:
        handle.set_configuration(profile)
        got = handle._transport.handshake
        want = handle.manifest.plugin_id
        if got.get("plugin_id") != want:
            return CheckResult("handshake_identity", "fail",
                               f"announced {got.get('plugin_id')!r}, "
                               f"manifest says {want!r}")
        if not isinstance(got.get("version"), str) or not got["version"]:
            return CheckResult("handshake_identity", "fail",
                               f"version missing in handshake: {got!r}")
        return CheckResult("handshake_identity", "pass")
    return _with_handle(subject, fn)


def _check_config_rejected(subject: ConformanceSubject,
                           profile: dict[str, str]) -> CheckResult:
    name = "config_rejected_without_seed"
    bad = {k: v for k, v in profile.items() if k != "seed"}

    def fn(handle: PluginHandle) -> CheckResult:
        try:
            handle.set_configuration(bad)
        except PluginRejectedConfig:
            pass
        else:
            return CheckResult(name, "fail", "config without seed accepted")
        if handle.state == "failed":
            return CheckResult(name, "fail",
                               "rejection must not kill the instance")
        try:
            handle.set_configuration(profile)
        except Exception as exc:
            return CheckResult(name, "fail",
                               f"no recovery after rejection: {exc}")
        return CheckResult(name, "pass")
    return _with_handle(subject, fn)


def _check_schema(subject: ConformanceSubject,
                  profile: dict[str, str]) -> CheckResult:
    def fn(handle: PluginHandle) -> CheckResult:
        handle.set_configuration(profile)
        schema = handle.get_data_structure()
        if schema != subject.expected_schema:
            return CheckResult("schema_shape", "fail",
                               f"got {schema!r}")
        if handle.get_data_structure() is not schema:
            return CheckResult("schema_shape", "fail",
                               "second fetch did not reuse the cached schema")
        return CheckResult("schema_shape", "pass")
    return _with_handle(subject, fn)


def _check_state_machine(subject: ConformanceSubject,
                         profile: dict[str, str]) -> CheckResult:
    name = "state_machine"

    def fn(handle: PluginHandle) -> CheckResult:
        handle.set_configuration(profile)
        handle.get_data_structure()
        try:
            handle.get_readings()
        except IllegalPluginState:
            pass
        else:
            return CheckResult(name, "fail", "read allowed before start")
        handle.start()
        if handle.get_readings() is None:
            return CheckResult(name, "fail", "no data on first read")
        handle.stop()
        try:
            handle.get_readings()
        except IllegalPluginState:
            pass
        else:
            return CheckResult(name, "fail", "read allowed after stop")
        handle.stop()  # must stay idempotent
        return CheckResult(name, "pass")
    return _with_handle(subject, fn)


def _check_determinism(subject: ConformanceSubject,
                       profile: dict[str, str], n: int = 16) -> CheckResult:
    name = "determinism_across_instances"
    first = canonical_stream(subject, profile, n)
    second = canonical_stream(subject, profile, n)
    if first != second:
        for i, (a, b) in enumerate(zip(first, second)):
            if a != b:
                return CheckResult(name, "fail",
                                   f"element {i}: {a!r} != {b!r}")
        return CheckResult(name, "fail",
                           f"lengths differ: {len(first)} vs {len(second)}")
    return CheckResult(name, "pass")


def _check_wrong_type(subject: ConformanceSubject,
                      profile: dict[str, str]) -> CheckResult:
    name = "wrong_type_raises_schema_violation"
    config = dict(profile, fault_mode="wrong_type")

    def fn(handle: PluginHandle) -> CheckResult:
        _configured(handle, config)
        for attempt in range(2):
            try:
                handle.get_readings()
            except SchemaViolation:
                pass
            else:
                return CheckResult(name, "fail",
                                   f"read {attempt} produced an element")
            if handle.state != "running":
                return CheckResult(name, "fail",
                                   f"state {handle.state} after bad data; "
                                   "bad data must not kill the instance")
        return CheckResult(name, "pass")
    return _with_handle(subject, fn)


def _check_stall(subject: ConformanceSubject,
                 profile: dict[str, str]) -> CheckResult:
    name = "stall_raises_timeout"
    if not subject.supports_timeout:
        return CheckResult(name, "skip", "transport enforces no deadlines")
    config = dict(profile, fault_mode="stall", stall_ms="60000")

    def fn(handle: PluginHandle) -> CheckResult:
        _configured(handle, config)
        try:
            handle.get_readings()
        except PluginTimeout:
            return CheckResult(name, "pass")
        return CheckResult(name, "fail", "stalled call returned")
    return _with_handle(subject, fn)


def _check_restart_cap(subject: ConformanceSubject,
                       profile: dict[str, str]) -> CheckResult:
    name = "restart_cap_fails_permanently"
    if not subject.supports_timeout:
        return CheckResult(name, "skip", "transport enforces no deadlines")
    config = dict(profile, fault_mode="stall", stall_ms="60000")

    def fn(handle: PluginHandle) -> CheckResult:
        _configured(handle, config)
        timeouts = 0
        for _ in range(handle.max_restarts + 2):
            if handle.state == "failed":
                break
            try:
                handle.get_readings()
            except PluginTimeout:
                timeouts += 1
            except IllegalPluginState:
                break
            else:
                return CheckResult(name, "fail", "stalled call returned")
        if handle.state != "failed":
            return CheckResult(name, "fail",
                               f"state {handle.state} after {timeouts} timeouts")
        if handle.restarts_done != handle.max_restarts:
            return CheckResult(name, "fail",
                               f"{handle.restarts_done} restarts, expected "
                               f"{handle.max_restarts}")
        try:
            handle.get_readings()
        except IllegalPluginState:
            return CheckResult(name, "pass")
        return CheckResult(name, "fail", "failed instance still answers reads")
    return _with_handle(subject, fn)


# --- suite -------------------------------------------------------------------


def run_conformance(subject: ConformanceSubject,
                    profile: dict[str, str] | None = None) -> list[CheckResult]:
    """Run every check; exceptions become failing rows, never propagate."""
    config = dict(DEFAULT_PROFILE if profile is None else profile)
    checks = (
        _check_handshake,
        _check_config_rejected,
        _check_schema,
        _check_state_machine,
        _check_determinism,
        _check_wrong_type,
        _check_stall,
        _check_restart_cap,
    )
    results = []
    for check in checks:
        try:
            result = check(subject, config)
        except Exception as exc:
            log.exception("conformance check %s blew up on %s",
                          check.__name__, subject.label)
            result = CheckResult(check.__name__.removeprefix("_check_"),
                                 "fail", f"unexpected {type(exc).__name__}: {exc}")
        results.append(result)
    return results


def summarize(label: str, results: list[CheckResult]) -> str:
    lines = [f"conformance: {label}"]
    for r in results:
        lines.append(f"  {r.status.upper():4} {r.name}"
                     + (f" ({r.detail})" if r.detail else ""))
    return "\n".join(lines)


def canonical_stream(subject: ConformanceSubject, config: dict[str, str],
                     n: int) -> list[bytes]:
    """N readings through a fresh handle, canonically serialized."""
    handle = subject.make_handle()
    try:
        _configured(handle, config)
        out = []
        while len(out) < n:
            element = handle.get_readings()
            if element is None:
                raise AssertionError(
                    f"{subject.label}: no data at element {len(out)}")
            out.append(serialize_stream_element(handle.schema, element))
        return out
    finally:
        handle.close()


def streams_equal(subject_a: ConformanceSubject, subject_b: ConformanceSubject,
                  config: dict[str, str], n: int = 32) -> tuple[bool, str]:
    """Byte-compare host-canonicalized streams from two implementations."""
    stream_a = canonical_stream(subject_a, config, n)
    stream_b = canonical_stream(subject_b, config, n)
    for i, (a, b) in enumerate(zip(stream_a, stream_b)):
        if a != b:
            return False, (f"element {i}: {subject_a.label}={a!r} "
                           f"{subject_b.label}={b!r}")
    return True, f"{n} elements byte-identical"
