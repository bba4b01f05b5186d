from __future__ import annotations

import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

from mosden.clock import MockClock
from mosden.model import (
    Aggregation,
    CostParameters,
    PluginBinding,
    VirtualSensorDefinition,
    WindowSpec,
)
from mosden.node import Node, NodeConfig
from mosden.plugins.sim import SIM_PLUGIN_ID
from mosden.registry import Registry

DEFAULT_COSTS = CostParameters(c_proc_per_sample=2.0, c_radio_wake=10.0,
                               c_per_byte=0.1)


def sim_vsd(name: str = "vs_temp", *, kind: str = "ramp", seed: int = 7,
            offset: float = 0.0, sampling_ms: int = 1000,
            emit_ms: int = 60_000, window: WindowSpec | None = None,
            aggregations=None, history: int = 4096,
            transport: str = "in_process", extra_config=None,
            fault_mode: str | None = None) -> VirtualSensorDefinition:
    config = {
        "kind": kind,
        "seed": str(seed),
        "offset": repr(float(offset)),
        "tick_ms": str(sampling_ms),
        "clock": "logical",
    }
    if fault_mode:
        config["fault_mode"] = fault_mode
    if extra_config:
        config.update(extra_config)
    command = None
    if transport == "subprocess":
        command = (sys.executable, "-m", "mosden.plugins.sim_main")
    return VirtualSensorDefinition(
        name=name,
        binding=PluginBinding(plugin_id=SIM_PLUGIN_ID, transport=transport,
                              command=command, config=config),
        window=window if window is not None else WindowSpec("count", 60),
        aggregations=tuple(aggregations) if aggregations is not None
        else (Aggregation("temp", "avg"), Aggregation("temp", "count")),
        emit_interval_ms=emit_ms,
        history_size=history,
        sampling_interval_ms=sampling_ms)


@pytest.fixture
def clock() -> MockClock:
    return MockClock()


@pytest.fixture
def node_factory(tmp_path):
    """Builds started Nodes; stops them in reverse order on teardown."""
    created: list[Node] = []

    def make(node_id: str = "n1", *, clock=None, registry_url=None,
             journal: bool = True, plugin_budget_bytes=None,
             cost_model: CostParameters = DEFAULT_COSTS,
             vsd_dir=None) -> Node:
        root = tmp_path / node_id
        plugin_dir = root / "plugins"
        plugin_dir.mkdir(parents=True, exist_ok=True)
        config = NodeConfig(
            node_id=node_id, host="127.0.0.1", port=0,
            plugin_dir=str(plugin_dir), data_dir=str(root / "data"),
            cost_model=cost_model, registry_url=registry_url,
            vsd_dir=vsd_dir, journal=journal,
            plugin_budget_bytes=plugin_budget_bytes)
        node = Node(config, clock=clock)
        node.start()
        created.append(node)
        return node

    yield make
    for node in reversed(created):
        node.stop()


@pytest.fixture
def registry_factory(tmp_path):
    created: list[Registry] = []

    def make(name: str = "reg", *, clock=None, liveness_horizon_ms=30_000) -> Registry:
        registry = Registry(str(tmp_path / name), clock=clock,
                            liveness_horizon_ms=liveness_horizon_ms)
        registry.start()
        created.append(registry)
        return registry

    yield make
    for registry in reversed(created):
        registry.stop()
