from __future__ import annotations

import math
import random

import pytest

from mosden.clock import MockClock
from mosden.plugins.protocol import PluginError
from mosden.plugins.sim import (
    LOGICAL_EPOCH_MS,
    SimPlugin,
    SimProfile,
    next_value,
    profile_from_config,
)


def configured(config: dict[str, str], clock=None) -> SimPlugin:
    plugin = SimPlugin(clock=clock)
    plugin.set_configuration(config)
    return plugin


BASE = {"kind": "ramp", "seed": "9", "offset": "2.0", "clock": "logical",
        "tick_ms": "1000"}


def test_seed_is_required():
    with pytest.raises(PluginError) as err:
        configured({"kind": "constant", "offset": "1.0"})
    assert "seed" in str(err.value)


def test_unknown_kind_rejected():
    with pytest.raises(PluginError):
        configured(dict(BASE, kind="sawtooth"))


def test_constant_profile():
    p = SimProfile(kind="constant", seed=0, offset=7.0)
    assert [next_value(p, i).values[0] for i in range(5)] == [7.0] * 5


def test_ramp_profile():
    p = SimProfile(kind="ramp", seed=0, offset=10.0)
    assert [next_value(p, i).values[0] for i in range(4)] == [10.0, 11.0, 12.0, 13.0]


def test_ramp_minute_average_is_arithmetic_mean():
    p = SimProfile(kind="ramp", seed=0, offset=0.0)
    values = [next_value(p, i).values[0] for i in range(60)]
    assert sum(values) / 60 == pytest.approx(29.5)


def test_sine_profile_formula():
    p = SimProfile(kind="sine", seed=0, period_ms=60_000, amplitude=5.0,
                   offset=20.0, tick_ms=1000)
    for i in (0, 7, 15, 30, 45):
        want = 20.0 + 5.0 * math.sin(2 * math.pi * (i * 1000) / 60_000)
        assert next_value(p, i).values[0] == pytest.approx(want, rel=0, abs=0)
    assert next_value(p, 0).values[0] == 20.0


def test_seeded_noise_is_deterministic_and_bounded():
    p = SimProfile(kind="seeded_noise", seed=42, amplitude=3.0, offset=1.0)
    first = [next_value(p, i).values[0] for i in range(100)]
    second = [next_value(p, i).values[0] for i in range(100)]
    assert first == second
    assert all(1.0 - 3.0 <= v <= 1.0 + 3.0 for v in first)
    assert next_value(p, 3).values[0] == 1.0 + 3.0 * (
        2 * random.Random("42:3").random() - 1)


def test_logical_timestamps():
    p = SimProfile(kind="constant", seed=0, offset=0.0, tick_ms=500)
    assert next_value(p, 0).timestamp == LOGICAL_EPOCH_MS
    assert next_value(p, 3).timestamp == LOGICAL_EPOCH_MS + 1500


def test_plugin_two_instances_identical_stream():
    a = configured(dict(BASE))
    b = configured(dict(BASE))
    assert [a.get_readings() for _ in range(20)] == \
           [b.get_readings() for _ in range(20)]


def test_plugin_reconfigure_resets_counter():
    plugin = configured(dict(BASE))
    first = plugin.get_readings()
    plugin.get_readings()
    plugin.set_configuration(dict(BASE))
    assert plugin.get_readings() == first


def test_host_clock_mode_uses_injected_clock():
    clock = MockClock()
    plugin = configured(dict(BASE, clock="host"), clock=clock)
    r = plugin.get_readings()
    assert r["timestamp"] == clock.now_ms()
    with pytest.raises(PluginError):
        configured(dict(BASE, clock="host"))  # no host clock available


def test_wrong_type_fault():
    plugin = configured(dict(BASE, fault_mode="wrong_type"))
    assert plugin.get_readings()["values"]["temp"] == "not-a-number"


def test_duplicate_timestamp_fault_regresses_on_odd_calls():
    plugin = configured(dict(BASE, fault_mode="duplicate_timestamp"))
    t0 = plugin.get_readings()["timestamp"]
    t1 = plugin.get_readings()["timestamp"]
    t2 = plugin.get_readings()["timestamp"]
    assert t1 == t0 - 1000  # stale, rejected downstream
    assert t2 > t0


def test_profile_from_config_tolerates_meta_keys():
    profile = profile_from_config(dict(BASE, meta_location="lab"))
    assert profile.kind == "ramp"


def test_profile_rejects_bad_numbers():
    with pytest.raises(PluginError):
        profile_from_config(dict(BASE, offset="warm"))
    with pytest.raises(PluginError):
        profile_from_config(dict(BASE, tick_ms="0"))


def test_get_data_structure_reports_temp_schema():
    plugin = configured(dict(BASE))
    assert plugin.get_data_structure() == [
        {"name": "temp", "value_type": "double", "unit": "celsius"}]


def test_get_data_structure_requires_config():
    with pytest.raises(PluginError):
        SimPlugin().get_data_structure()
