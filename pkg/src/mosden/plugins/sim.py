"""Deterministic simulated sensors: the reference plugin.

A profile fully determines the value stream: same profile, same call
count, same bytes. That is what lets one test compare an in-process
instance against a subprocess instance, or an instance written in another
language, value for value.

Timestamp source is a config choice:
  logical  epoch 1700000000000 + call_index * tick_ms (pure, reproducible;
           what conformance and cross-language comparisons use)
  wall     the plugin process's wall clock (live deployments)
  host     the hosting node's clock (in-process only; follows a test clock)

Fault modes for exercising host error paths:
  wrong_type           emits a string where the schema says double
  stall                sleeps stall_ms before answering (induces timeout)
  duplicate_timestamp  every odd call re-serves a stale timestamp, one
                       tick older than the previous reading, as a cached
                       sensor read would; the store rejects it
"""

from __future__ import annotations

import math
import random
import time
from dataclasses import dataclass
from typing import Any, Mapping

from ..clock import Clock
from ..model import DataField, StreamElement
from .host import PluginManifest
from .protocol import ACTION, PluginError, PluginProgram

__all__ = ["SimProfile", "SimPlugin", "next_value", "make_reference_plugin",
           "register_builtin", "SIM_PLUGIN_ID", "SIM_SCHEMA", "LOGICAL_EPOCH_MS"]

SIM_PLUGIN_ID = "mosden.sim"
SIM_VERSION = "1.0.0"
SIM_SIZE_BYTES = 25_000

SIM_SCHEMA = (DataField(name="temp", value_type="double", unit="celsius"),)

PROFILE_KINDS = ("constant", "ramp", "sine", "seeded_noise")
FAULT_MODES = ("wrong_type", "stall", "duplicate_timestamp")
CLOCK_MODES = ("wall", "logical", "host")

LOGICAL_EPOCH_MS = 1_700_000_000_000


@dataclass(frozen=True)
class SimProfile:
    kind: str = "constant"
    seed: int = 0
    period_ms: int = 60_000
    amplitude: float = 1.0
    offset: float = 0.0
    tick_ms: int = 1000
    fault_mode: str | None = None
    clock_mode: str = "wall"
    stall_ms: int = 60_000

    def __post_init__(self) -> None:
        if self.kind not in PROFILE_KINDS:
            raise PluginError(f"unknown profile kind {self.kind!r}")
        if self.fault_mode is not None and self.fault_mode not in FAULT_MODES:
            raise PluginError(f"unknown fault_mode {self.fault_mode!r}")
        if self.clock_mode not in CLOCK_MODES:
            raise PluginError(f"unknown clock {self.clock_mode!r}")
        if self.period_ms <= 0 or self.tick_ms <= 0:
            raise PluginError("period_ms and tick_ms must be positive")

    def to_config(self) -> dict[str, str]:
        """The string map a VSD binding would carry for this profile."""
        config = {
            "kind": self.kind,
            "seed": str(self.seed),
            "period_ms": str(self.period_ms),
            "amplitude": repr(self.amplitude),
            "offset": repr(self.offset),
            "tick_ms": str(self.tick_ms),
            "clock": self.clock_mode,
        }
        if self.fault_mode:
            config["fault_mode"] = self.fault_mode
            config["stall_ms"] = str(self.stall_ms)
        return config


def profile_from_config(config: Mapping[str, str]) -> SimProfile:
    """Parse the string map; "seed" is the one required key."""
    if "seed" not in config:
        raise PluginError("missing required config key: seed")

    def _int(key: str, default: int) -> int:
        try:
            return int(config.get(key, default))
        except ValueError:
            raise PluginError(f"config key {key} must be an integer") from None

    def _float(key: str, default: float) -> float:
        try:
            return float(config.get(key, default))
        except ValueError:
            raise PluginError(f"config key {key} must be a number") from None

    return SimProfile(
        kind=config.get("kind", "constant"),
        seed=_int("seed", 0),
        period_ms=_int("period_ms", 60_000),
        amplitude=_float("amplitude", 1.0),
        offset=_float("offset", 0.0),
        tick_ms=_int("tick_ms", 1000),
        fault_mode=config.get("fault_mode") or None,
        clock_mode=config.get("clock", "wall"),
        stall_ms=_int("stall_ms", 60_000),
    )


def _sim_value(p: SimProfile, call_index: int) -> float:
    if p.kind == "constant":
        return p.offset
    if p.kind == "ramp":
        return p.offset + float(call_index)
    if p.kind == "sine":
        phase = 2.0 * math.pi * (call_index * p.tick_ms) / p.period_ms
        return p.offset + p.amplitude * math.sin(phase)
    # seeded_noise: a fresh generator per call keeps the stream a pure
    # function of (seed, call_index), independent of call history
    r = random.Random(f"{p.seed}:{call_index}").random()
    return p.offset + p.amplitude * (2.0 * r - 1.0)


def next_value(p: SimProfile, call_index: int) -> StreamElement:
    """Pure: the element this profile emits on its call_index-th read,
    stamped with the logical clock."""
    if call_index < 0:
        raise PluginError("call_index must be >= 0")
    ts = LOGICAL_EPOCH_MS + call_index * p.tick_ms
    return StreamElement(timestamp=ts, values=(_sim_value(p, call_index),))


class SimPlugin(PluginProgram):
    """Reference plugin logic; one instance per bound virtual sensor."""

    plugin_id = SIM_PLUGIN_ID
    version = SIM_VERSION

    def __init__(self, clock: Clock | None = None, plugin_id: str | None = None):
        if plugin_id is not None:
            self.plugin_id = plugin_id
        self._host_clock = clock
        self._profile: SimProfile | None = None
        self._call_index = 0
        self._last_ts: int | None = None

    def set_configuration(self, config: Mapping[str, str]) -> None:
        for key, value in config.items():
            if not isinstance(key, str) or not isinstance(value, str):
                raise PluginError("config must map strings to strings")
        profile = profile_from_config(config)
        if profile.clock_mode == "host" and self._host_clock is None:
            raise PluginError("clock=host is only available in-process")
        self._profile = profile
        self._call_index = 0
        self._last_ts = None

    def get_data_structure(self) -> list[dict[str, Any]]:
        if self._profile is None:
            raise PluginError("not configured")
        return [{"name": f.name, "value_type": f.value_type, "unit": f.unit}
                for f in SIM_SCHEMA]

    def get_readings(self) -> dict[str, Any] | None:
        p = self._profile
        if p is None:
            raise PluginError("not configured")
        i = self._call_index
        self._call_index += 1
        if p.fault_mode == "stall":
            time.sleep(p.stall_ms / 1000.0)
        if p.clock_mode == "logical":
            ts = LOGICAL_EPOCH_MS + i * p.tick_ms
        elif p.clock_mode == "host":
            ts = self._host_clock.now_ms()
        else:
            ts = int(time.time() * 1000)
        if p.fault_mode == "duplicate_timestamp" and i % 2 == 1 and self._last_ts is not None:
            ts = self._last_ts - p.tick_ms
        else:
            self._last_ts = ts
        if p.fault_mode == "wrong_type":
            return {"timestamp": ts, "values": {"temp": "not-a-number"}}
        return {"timestamp": ts, "values": {"temp": _sim_value(p, i)}}


def sim_manifest(plugin_id: str = SIM_PLUGIN_ID,
                 command: tuple[str, ...] | None = None,
                 directory: str | None = None,
                 size_bytes: int = SIM_SIZE_BYTES) -> PluginManifest:
    return PluginManifest(plugin_id=plugin_id, version=SIM_VERSION, action=ACTION,
                          size_bytes=size_bytes, categories=("temperature", "simulated"),
                          command=command, directory=directory)


def register_builtin(registry, plugin_id: str = SIM_PLUGIN_ID) -> PluginManifest:
    """Make the in-process reference plugin available under plugin_id."""
    manifest = sim_manifest(plugin_id)

    def factory(clock: Clock | None = None, **_: Any) -> SimPlugin:
        return SimPlugin(clock=clock, plugin_id=plugin_id)

    registry.register_builtin(manifest, factory)
    return manifest


def make_reference_plugin(p: SimProfile, transport: str,
                          plugin_id: str = SIM_PLUGIN_ID,
                          command: tuple[str, ...] | None = None):
    """(manifest, binding config, factory-or-None) for the given transport.

    For "subprocess" the default command launches this package's stdio
    entry point with the current interpreter.
    """
    config = p.to_config()
    if transport == "in_process":
        def factory(clock: Clock | None = None, **_: Any) -> SimPlugin:
            return SimPlugin(clock=clock, plugin_id=plugin_id)
        return sim_manifest(plugin_id), config, factory
    import sys
    cmd = command or (sys.executable, "-m", "mosden.plugins.sim_main", plugin_id)
    return sim_manifest(plugin_id, command=cmd), config, None
