"""Command line entry points: node daemon, registry daemon, bench runner."""

from __future__ import annotations

import argparse
import logging
import os
import signal
import sys
import threading

from .bench import Scenario, ScenarioError, run_bench
from .model import MosdenError
from .node import ConfigError, Node, NodeConfig
from .registry import Registry

log = logging.getLogger(__name__)

LOG_LEVELS = {"debug": logging.DEBUG, "info": logging.INFO,
              "warn": logging.WARNING}


def _setup_logging() -> None:
    level_name = os.environ.get("MOSDEN_LOG", "info").lower()
    level = LOG_LEVELS.get(level_name)
    if level is None:
        print(f"MOSDEN_LOG must be one of {'/'.join(LOG_LEVELS)}, "
              f"got {level_name!r}", file=sys.stderr)
        level = logging.INFO
    logging.basicConfig(
        level=level,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s")


def _wait_for_signal() -> None:
    stop = threading.Event()

    def on_signal(signum, frame):
        log.info("received %s, shutting down", signal.Signals(signum).name)
        stop.set()

    signal.signal(signal.SIGINT, on_signal)
    signal.signal(signal.SIGTERM, on_signal)
    stop.wait()


def _split_listen(addr: str) -> tuple[str, int]:
    host, sep, port = addr.rpartition(":")
    if not sep or not port.isdigit():
        raise ConfigError(f"listen address must be host:port, got {addr!r}")
    return host or "127.0.0.1", int(port)


def cmd_node(args: argparse.Namespace) -> int:
    config = NodeConfig.from_file(args.config)
    node = Node(config)
    node.start()
    log.info("node %s serving on %s", config.node_id, node.base_url)
    try:
        _wait_for_signal()
    finally:
        node.stop()
    return 0


def cmd_registry(args: argparse.Namespace) -> int:
    host, port = _split_listen(args.listen)
    registry = Registry(args.data, host=host, port=port)
    registry.start()
    log.info("registry serving on %s, data in %s", registry.base_url, args.data)
    try:
        _wait_for_signal()
    finally:
        registry.stop()
    return 0


def cmd_bench(args: argparse.Namespace) -> int:
    scenario = Scenario.from_file(args.scenario)
    rows = run_bench(scenario, args.out)
    bad = [r for r in rows if r["status"] != "ok"]
    print(f"wrote {args.out} ({len(rows)} points, {len(bad)} failed)")
    return 1 if bad else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mosden",
        description="Edge sensing node, cloud registry, and bench runner.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_node = sub.add_parser("node", help="run an edge node")
    p_node.add_argument("--config", required=True,
                        help="node config JSON path")
    p_node.set_defaults(fn=cmd_node)

    p_reg = sub.add_parser("registry", help="run the cloud registry")
    p_reg.add_argument("--listen", required=True, metavar="HOST:PORT")
    p_reg.add_argument("--data", required=True, help="state directory")
    p_reg.set_defaults(fn=cmd_registry)

    p_bench = sub.add_parser("bench", help="run a scaling scenario")
    p_bench.add_argument("--scenario", required=True,
                         help="scenario JSON path")
    p_bench.add_argument("--out", required=True, help="CSV output path")
    p_bench.set_defaults(fn=cmd_bench)
    return parser


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, ScenarioError, MosdenError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
