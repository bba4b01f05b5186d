"""Edge sensing middleware: pluggable sensor drivers behind one generic
wrapper, windowed in-node aggregation, push/pull streaming to a cloud
registry and to peer nodes, plus an energy model for the local-processing
versus raw-forwarding tradeoff and a scaling bench harness.
"""

from .clock import Clock, MockClock, SystemClock, TaskHandle
from .model import (
    Aggregation,
    CostParameters,
    DataField,
    InvariantError,
    MosdenError,
    PluginBinding,
    SchemaError,
    SensorDescriptor,
    StreamElement,
    Subscription,
    TypeMismatch,
    VirtualSensorDefinition,
    WindowSpec,
    canonical_json_bytes,
    parse_stream_element,
    parse_vsd,
    serialize_stream_element,
    serialize_vsd,
)
from .node import ConfigError, Node, NodeConfig
from .offload import EnergyEstimate, TransmissionPlan, account, decide, estimate, plan
from .registry import Registry, UserRequest
from .store import (
    OutOfOrderTimestamp,
    StreamStore,
    WindowResult,
    evaluate_window,
)

__all__ = [
    "Aggregation", "Clock", "ConfigError", "CostParameters", "DataField",
    "EnergyEstimate", "InvariantError", "MockClock", "MosdenError", "Node",
    "NodeConfig", "OutOfOrderTimestamp", "PluginBinding", "Registry",
    "SchemaError", "SensorDescriptor", "StreamElement", "StreamStore",
    "Subscription", "SystemClock", "TaskHandle", "TransmissionPlan",
    "TypeMismatch", "UserRequest", "VirtualSensorDefinition", "WindowResult",
    "WindowSpec", "account", "canonical_json_bytes", "decide", "estimate",
    "evaluate_window", "parse_stream_element", "parse_vsd", "plan",
    "serialize_stream_element", "serialize_vsd",
]

__version__ = "0.1.0"
