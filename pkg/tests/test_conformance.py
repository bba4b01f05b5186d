"""The conformance suite run against both reference plugin transports."""

from __future__ import annotations

import sys

import pytest

from mosden.plugins.conformance import (
    DEFAULT_PROFILE,
    canonical_stream,
    in_process_subject,
    run_conformance,
    streams_equal,
    subprocess_subject,
    summarize,
)
from mosden.plugins.sim import LOGICAL_EPOCH_MS, SimPlugin, sim_manifest

SUBPROCESS_COMMAND = (sys.executable, "-m", "mosden.plugins.sim_main")


def make_in_process():
    return in_process_subject("sim/in-process", SimPlugin, sim_manifest())


def make_subprocess():
    return subprocess_subject(
        "sim/subprocess", sim_manifest(command=SUBPROCESS_COMMAND))


def by_name(results):
    return {r.name: r for r in results}


def test_in_process_subject_passes():
    results = by_name(run_conformance(make_in_process()))
    assert len(results) == 8
    failed = [r for r in results.values() if r.status == "fail"]
    assert failed == [], summarize("sim/in-process", list(results.values()))
    # deadline checks cannot apply to a same-thread transport
    assert results["stall_raises_timeout"].status == "skip"
    assert results["restart_cap_fails_permanently"].status == "skip"
    passing = [r for r in results.values() if r.status == "pass"]
    assert len(passing) == 6


def test_subprocess_subject_passes():
    results = by_name(run_conformance(make_subprocess()))
    assert len(results) == 8
    failed = [r for r in results.values() if r.status == "fail"]
    assert failed == [], summarize("sim/subprocess", list(results.values()))
    assert all(r.status == "pass" for r in results.values())


def test_conformance_catches_a_liar():
    # same program, manifest claiming a different identity: the handshake
    # check must call it out rather than blow up the suite
    manifest = sim_manifest(plugin_id="somebody.else")
    results = run_conformance(in_process_subject("liar", SimPlugin, manifest))
    first = results[0]
    assert first.name.startswith("handshake")
    assert first.status == "fail"
    assert "somebody.else" in first.detail


def test_canonical_stream_bytes():
    stream = canonical_stream(make_in_process(),
                              dict(DEFAULT_PROFILE, kind="constant",
                                   offset="3.0"), 2)
    t0 = LOGICAL_EPOCH_MS
    assert stream == [
        b'{"timestamp":%d,"values":{"temp":3.0}}' % t0,
        b'{"timestamp":%d,"values":{"temp":3.0}}' % (t0 + 1000),
    ]


@pytest.mark.parametrize("profile", [
    dict(DEFAULT_PROFILE, kind="constant", offset="21.5"),
    dict(DEFAULT_PROFILE, kind="ramp", offset="3.0"),
])
def test_transports_are_byte_identical(profile):
    ok, detail = streams_equal(make_in_process(), make_subprocess(),
                               profile, n=16)
    assert ok, detail


def test_streams_equal_reports_first_divergence():
    a = in_process_subject("a", SimPlugin, sim_manifest())
    b = in_process_subject("b", SimPlugin, sim_manifest())
    ok, detail = streams_equal(a, b, dict(DEFAULT_PROFILE, offset="1.0"),
                               n=4)
    assert ok
    ok, detail = streams_equal(
        a, b, dict(DEFAULT_PROFILE), n=0)
    assert ok  # vacuous but well-defined

    diverging = canonical_stream(a, dict(DEFAULT_PROFILE, offset="1.0"), 4)
    other = canonical_stream(b, dict(DEFAULT_PROFILE, offset="2.0"), 4)
    assert diverging != other
