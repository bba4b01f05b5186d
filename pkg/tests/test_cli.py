"""Argument parsing and the bench subcommand end to end."""

from __future__ import annotations

import json

import pytest

from mosden.cli import LOG_LEVELS, _split_listen, build_parser, main
from mosden.node import ConfigError


def test_parser_requires_a_command(capsys):
    with pytest.raises(SystemExit):
        build_parser().parse_args([])
    with pytest.raises(SystemExit):
        build_parser().parse_args(["node"])  # --config is mandatory


def test_parser_wires_subcommands():
    args = build_parser().parse_args(["node", "--config", "n.json"])
    assert args.command == "node"
    assert args.config == "n.json"
    args = build_parser().parse_args(
        ["registry", "--listen", "127.0.0.1:8400", "--data", "/tmp/reg"])
    assert (args.listen, args.data) == ("127.0.0.1:8400", "/tmp/reg")
    args = build_parser().parse_args(
        ["bench", "--scenario", "s.json", "--out", "r.csv"])
    assert (args.scenario, args.out) == ("s.json", "r.csv")


def test_split_listen():
    assert _split_listen("0.0.0.0:8400") == ("0.0.0.0", 8400)
    assert _split_listen(":9000") == ("127.0.0.1", 9000)
    for bad in ("8400", "host:", "host:port", "host"):
        with pytest.raises(ConfigError):
            _split_listen(bad)


def test_log_levels_cover_documented_names():
    assert set(LOG_LEVELS) == {"debug", "info", "warn"}


def test_bench_command_runs_scenario(tmp_path, capsys):
    scenario = {"axis": "sensors", "points": [2], "duration_s": 3,
                "sampling_ms": 1000, "clock": "mock", "seed": 1,
                "cost_model": {"c_proc_per_sample": 1.0}}
    spath = tmp_path / "scenario.json"
    spath.write_text(json.dumps(scenario))
    out = tmp_path / "result.csv"
    rc = main(["bench", "--scenario", str(spath), "--out", str(out)])
    assert rc == 0
    lines = out.read_text().splitlines()
    assert len(lines) == 2
    assert lines[1].startswith("2,6,0,0,")  # 2 sensors x 3 ticks
    assert "wrote" in capsys.readouterr().out


def test_bench_command_bad_scenario_exits_2(tmp_path, capsys):
    spath = tmp_path / "scenario.json"
    spath.write_text(json.dumps({"axis": "sideways"}))
    rc = main(["bench", "--scenario", str(spath),
               "--out", str(tmp_path / "r.csv")])
    assert rc == 2
    assert "error:" in capsys.readouterr().err


def test_node_command_bad_config_exits_2(tmp_path, capsys):
    cpath = tmp_path / "node.json"
    cpath.write_text(json.dumps({"node_id": "n1"}))  # missing keys
    rc = main(["node", "--config", str(cpath)])
    assert rc == 2
    assert "error:" in capsys.readouterr().err
