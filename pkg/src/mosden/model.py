"""Shared data types, validation, and canonical serialized forms.

Everything in this module is immutable after construction and performs no
I/O. The canonical JSON forms defined here (virtual sensor definitions,
stream elements) are the wire and file formats used by every other module.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

__all__ = [
    "IDENTIFIER_RE",
    "VALUE_TYPES",
    "AGGREGATION_FNS",
    "NUMERIC_AGGREGATION_FNS",
    "MosdenError",
    "SchemaError",
    "InvariantError",
    "TypeMismatch",
    "Violation",
    "DataField",
    "StreamElement",
    "PluginBinding",
    "WindowSpec",
    "Aggregation",
    "VirtualSensorDefinition",
    "SensorDescriptor",
    "Subscription",
    "CostParameters",
    "parse_vsd",
    "serialize_vsd",
    "parse_stream_element",
    "serialize_stream_element",
    "validate_element_against_schema",
    "schema_to_jsonable",
    "schema_from_jsonable",
    "canonical_json_bytes",
]

IDENTIFIER_RE = re.compile(r"^[a-z][a-z0-9_]*$")

VALUE_TYPES = ("double", "integer", "string")

AGGREGATION_FNS = ("avg", "min", "max", "sum", "count", "last")
NUMERIC_AGGREGATION_FNS = ("avg", "min", "max", "sum")

SUBSCRIPTION_MODES = ("push", "pull")
PAYLOAD_KINDS = ("processed", "raw")
TRANSPORTS = ("in_process", "subprocess")
WINDOW_KINDS = ("count", "time")


class MosdenError(Exception):
    """Base class for all errors raised by this package."""


class SchemaError(MosdenError):
    """A document does not match its declared JSON schema.

    ``path`` is a JSON pointer to the offending key.
    """

    def __init__(self, message: str, path: str = ""):
        super().__init__(f"{path or '/'}: {message}" if path else message)
        self.path = path


class InvariantError(MosdenError):
    """A structurally valid document violates a value invariant."""

    def __init__(self, message: str, path: str = ""):
        super().__init__(f"{path or '/'}: {message}" if path else message)
        self.path = path


class TypeMismatch(MosdenError):
    """A stream element disagrees with its schema."""

    def __init__(self, violations: Sequence["Violation"]):
        self.violations = list(violations)
        super().__init__("; ".join(str(v) for v in self.violations) or "type mismatch")


@dataclass(frozen=True)
class Violation:
    """One failed validation rule: ``kind`` is machine-readable."""

    kind: str  # "arity_mismatch" | "type_mismatch"
    path: str
    detail: str

    def __str__(self) -> str:
        return f"{self.kind} at {self.path or '/'}: {self.detail}"


def _require(cond: bool, message: str, path: str = "", invariant: bool = False) -> None:
    if not cond:
        raise (InvariantError if invariant else SchemaError)(message, path)


def _is_int(v: Any) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


@dataclass(frozen=True)
class DataField:
    """One column of a stream schema."""

    name: str
    value_type: str
    unit: str | None = None

    def __post_init__(self) -> None:
        _require(bool(IDENTIFIER_RE.match(self.name)),
                 f"field name {self.name!r} is not a lowercase identifier", invariant=True)
        _require(self.value_type in VALUE_TYPES,
                 f"unknown value_type {self.value_type!r}", invariant=True)

    def accepts(self, value: Any) -> bool:
        if self.value_type == "double":
            return isinstance(value, float)
        if self.value_type == "integer":
            return _is_int(value)
        return isinstance(value, str)

    def coerce(self, value: Any) -> Any:
        """Coerce a JSON-decoded value to this field's runtime type.

        JSON cannot distinguish 21 from 21.0, so integers are widened for
        double fields. Anything else must already match.
        """
        if self.value_type == "double" and _is_int(value):
            return float(value)
        return value


def _check_schema(schema: Sequence[DataField]) -> None:
    names = [f.name for f in schema]
    _require(len(names) == len(set(names)),
             f"duplicate field names in schema: {names}", invariant=True)


def schema_to_jsonable(schema: Sequence[DataField]) -> list[dict[str, Any]]:
    out = []
    for f in schema:
        d: dict[str, Any] = {"name": f.name, "value_type": f.value_type}
        if f.unit is not None:
            d["unit"] = f.unit
        out.append(d)
    return out


def schema_from_jsonable(data: Any, path: str = "") -> list[DataField]:
    _require(isinstance(data, list) and data, "schema must be a non-empty array", path)
    fields = []
    for i, item in enumerate(data):
        p = f"{path}/{i}"
        _require(isinstance(item, dict), "schema entry must be an object", p)
        _require("name" in item and "value_type" in item,
                 "schema entry needs name and value_type", p)
        unit = item.get("unit")
        _require(unit is None or isinstance(unit, str), "unit must be a string", f"{p}/unit")
        _require(isinstance(item["name"], str), "name must be a string", f"{p}/name")
        _require(isinstance(item["value_type"], str), "value_type must be a string",
                 f"{p}/value_type")
        fields.append(DataField(item["name"], item["value_type"], unit))
    _check_schema(fields)
    return fields


@dataclass(frozen=True)
class StreamElement:
    """One timestamped reading row. ``values`` are ordered per the schema."""

    timestamp: int  # milliseconds since Unix epoch, producer-assigned
    values: tuple

    def __post_init__(self) -> None:
        _require(_is_int(self.timestamp), "timestamp must be an integer", invariant=True)
        object.__setattr__(self, "values", tuple(self.values))


def validate_element_against_schema(
    schema: Sequence[DataField], e: StreamElement
) -> list[Violation]:
    """Return one violation per failing rule; empty list means valid.

    Total function: never raises.
    """
    if len(e.values) != len(schema):
        return [Violation("arity_mismatch", "/values",
                          f"{len(e.values)} values for {len(schema)} fields")]
    out = []
    for i, (f, v) in enumerate(zip(schema, e.values)):
        if not f.accepts(v):
            out.append(Violation(
                "type_mismatch", f"/values/{f.name}",
                f"field {i} expects {f.value_type}, got {type(v).__name__}"))
    return out


def canonical_json_bytes(obj: Any) -> bytes:
    """Compact UTF-8 JSON with insertion key order preserved."""
    return json.dumps(obj, separators=(",", ":"), ensure_ascii=False).encode("utf-8")


def serialize_stream_element(schema: Sequence[DataField], e: StreamElement) -> bytes:
    """Canonical element JSON: timestamp first, then values in schema order."""
    violations = validate_element_against_schema(schema, e)
    if violations:
        raise TypeMismatch(violations)
    values = {f.name: v for f, v in zip(schema, e.values)}
    return canonical_json_bytes({"timestamp": e.timestamp, "values": values})


def parse_stream_element(schema: Sequence[DataField], document: Any) -> StreamElement:
    """Parse an element from bytes/str/dict, coercing values per schema."""
    if isinstance(document, (bytes, str)):
        try:
            document = json.loads(document)
        except ValueError as exc:
            raise SchemaError(f"invalid JSON: {exc}") from None
    _require(isinstance(document, dict), "element must be an object")
    _require("timestamp" in document, "missing key", "/timestamp")
    _require("values" in document, "missing key", "/values")
    ts = document["timestamp"]
    _require(_is_int(ts), "timestamp must be an integer", "/timestamp")
    raw = document["values"]
    _require(isinstance(raw, dict), "values must be an object", "/values")
    missing = [f.name for f in schema if f.name not in raw]
    _require(not missing, f"missing fields {missing}", "/values")
    extra = [k for k in raw if k not in {f.name for f in schema}]
    _require(not extra, f"unexpected fields {extra}", "/values")
    values = tuple(f.coerce(raw[f.name]) for f in schema)
    e = StreamElement(ts, values)
    violations = validate_element_against_schema(schema, e)
    if violations:
        raise TypeMismatch(violations)
    return e


@dataclass(frozen=True)
class PluginBinding:
    """Selects a plugin and carries its per-sensor configuration."""

    plugin_id: str
    transport: str
    command: tuple[str, ...] | None = None
    config: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        _require(bool(self.plugin_id), "plugin_id must be non-empty", invariant=True)
        _require(self.transport in TRANSPORTS,
                 f"unknown transport {self.transport!r}", invariant=True)
        if self.command is not None:
            object.__setattr__(self, "command", tuple(self.command))
        has_command = bool(self.command)
        _require((self.transport == "subprocess") == has_command,
                 "command is required iff transport is subprocess", invariant=True)
        object.__setattr__(self, "config", dict(self.config))
        for k, v in self.config.items():
            _require(isinstance(k, str) and isinstance(v, str),
                     "config must map strings to strings", invariant=True)


@dataclass(frozen=True)
class WindowSpec:
    """Window selection: last ``size`` rows (count) or the half-open
    interval (now - size, now] in milliseconds (time)."""

    kind: str
    size: int

    def __post_init__(self) -> None:
        _require(self.kind in WINDOW_KINDS, f"unknown window kind {self.kind!r}",
                 invariant=True)
        _require(_is_int(self.size) and self.size >= 1, "window size must be >= 1",
                 invariant=True)


@dataclass(frozen=True)
class Aggregation:
    field: str
    fn: str

    def __post_init__(self) -> None:
        _require(bool(IDENTIFIER_RE.match(self.field)),
                 f"aggregation field {self.field!r} is not an identifier", invariant=True)
        _require(self.fn in AGGREGATION_FNS, f"unknown aggregation fn {self.fn!r}",
                 invariant=True)

    @property
    def key(self) -> str:
        return f"{self.field}.{self.fn}"


@dataclass(frozen=True)
class VirtualSensorDefinition:
    """Declarative binding of plugin + config + sampling + window query."""

    name: str
    binding: PluginBinding
    window: WindowSpec
    aggregations: tuple[Aggregation, ...]
    emit_interval_ms: int
    history_size: int
    sampling_interval_ms: int = 1000
    description: str | None = None

    def __post_init__(self) -> None:
        _require(bool(IDENTIFIER_RE.match(self.name)),
                 f"virtual sensor name {self.name!r} is not an identifier", invariant=True)
        object.__setattr__(self, "aggregations", tuple(self.aggregations))
        _require(len(self.aggregations) >= 1, "aggregations must be non-empty",
                 invariant=True)
        for n in ("sampling_interval_ms", "emit_interval_ms", "history_size"):
            _require(_is_int(getattr(self, n)) and getattr(self, n) >= 1,
                     f"{n} must be a positive integer", invariant=True)
        _require(self.emit_interval_ms >= self.sampling_interval_ms,
                 "emit_interval_ms must be >= sampling_interval_ms", invariant=True)


@dataclass(frozen=True)
class SensorDescriptor:
    """Registry-facing description of one virtual sensor on one node."""

    node_id: str
    vs_name: str
    schema: tuple[DataField, ...]
    metadata: Mapping[str, str]
    registered_at: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "schema", tuple(self.schema))
        _check_schema(self.schema)
        object.__setattr__(self, "metadata", dict(self.metadata))

    def to_jsonable(self) -> dict[str, Any]:
        return {
            "node_id": self.node_id,
            "vs_name": self.vs_name,
            "schema": schema_to_jsonable(self.schema),
            "metadata": dict(self.metadata),
            "registered_at": self.registered_at,
        }

    @classmethod
    def from_jsonable(cls, data: Any) -> "SensorDescriptor":
        _require(isinstance(data, dict), "descriptor must be an object")
        for key in ("node_id", "vs_name", "schema", "metadata", "registered_at"):
            _require(key in data, "missing key", f"/{key}")
        _require(isinstance(data["node_id"], str), "node_id must be a string", "/node_id")
        _require(isinstance(data["vs_name"], str), "vs_name must be a string", "/vs_name")
        _require(_is_int(data["registered_at"]), "registered_at must be an integer",
                 "/registered_at")
        meta = data["metadata"]
        _require(isinstance(meta, dict), "metadata must be an object", "/metadata")
        return cls(
            node_id=data["node_id"],
            vs_name=data["vs_name"],
            schema=tuple(schema_from_jsonable(data["schema"], "/schema")),
            metadata={str(k): str(v) for k, v in meta.items()},
            registered_at=data["registered_at"],
        )


@dataclass(frozen=True)
class Subscription:
    """A registered push or pull request with a delivery endpoint and expiry.

    ``payload_kind`` selects what push deliveries carry: "processed" sends
    the windowed aggregation result, "raw" sends batches of raw elements.
    """

    id: str
    vs_name: str
    mode: str
    interval_ms: int
    expiry: int
    delivery_endpoint: str | None = None
    payload_kind: str = "processed"

    def __post_init__(self) -> None:
        _require(self.mode in SUBSCRIPTION_MODES, f"unknown mode {self.mode!r}",
                 invariant=True)
        _require(self.payload_kind in PAYLOAD_KINDS,
                 f"unknown payload_kind {self.payload_kind!r}", invariant=True)
        _require(_is_int(self.interval_ms) and self.interval_ms >= 1,
                 "interval_ms must be a positive integer", invariant=True)
        _require(_is_int(self.expiry), "expiry must be an integer", invariant=True)
        if self.mode == "push":
            _require(bool(self.delivery_endpoint),
                     "push subscriptions require delivery_endpoint", invariant=True)

    def to_jsonable(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "id": self.id,
            "vs_name": self.vs_name,
            "mode": self.mode,
            "interval_ms": self.interval_ms,
            "expiry": self.expiry,
            "payload_kind": self.payload_kind,
        }
        if self.delivery_endpoint is not None:
            out["delivery_endpoint"] = self.delivery_endpoint
        return out


@dataclass(frozen=True)
class CostParameters:
    """Coefficients of the declared synthetic energy model (unitless)."""

    c_proc_per_sample: float = 0.0
    c_radio_wake: float = 0.0
    c_per_byte: float = 0.0

    def __post_init__(self) -> None:
        for n in ("c_proc_per_sample", "c_radio_wake", "c_per_byte"):
            v = getattr(self, n)
            _require(isinstance(v, (int, float)) and not isinstance(v, bool) and v >= 0,
                     f"{n} must be >= 0", invariant=True)
            object.__setattr__(self, n, float(v))

    def to_jsonable(self) -> dict[str, float]:
        return {
            "c_proc_per_sample": self.c_proc_per_sample,
            "c_radio_wake": self.c_radio_wake,
            "c_per_byte": self.c_per_byte,
        }

    @classmethod
    def from_jsonable(cls, data: Any, path: str = "") -> "CostParameters":
        _require(isinstance(data, dict), "cost model must be an object", path)
        known = {"c_proc_per_sample", "c_radio_wake", "c_per_byte"}
        extra = set(data) - known
        _require(not extra, f"unexpected keys {sorted(extra)}", path)
        return cls(**{k: data.get(k, 0.0) for k in known})


# --- VSD document parsing ------------------------------------------------

_VSD_KEYS = {
    "name", "binding", "sampling_interval_ms", "window", "aggregations",
    "emit_interval_ms", "history_size", "description",
}
_VSD_REQUIRED = {"name", "binding", "window", "aggregations",
                 "emit_interval_ms", "history_size"}
_BINDING_KEYS = {"plugin_id", "transport", "command", "config"}
_BINDING_REQUIRED = {"plugin_id", "transport", "config"}


def _expect_str(doc: Mapping[str, Any], key: str, path: str) -> str:
    v = doc[key]
    _require(isinstance(v, str), "expected a string", f"{path}/{key}")
    return v


def _expect_int(doc: Mapping[str, Any], key: str, path: str) -> int:
    v = doc[key]
    _require(_is_int(v), "expected an integer", f"{path}/{key}")
    return v


def _check_keys(doc: Mapping[str, Any], allowed: set, required: set, path: str) -> None:
    for key in required:
        _require(key in doc, "missing required key", f"{path}/{key}")
    for key in doc:
        _require(key in allowed, "unexpected key", f"{path}/{key}")


def parse_vsd(document: bytes | str | Mapping[str, Any]) -> VirtualSensorDefinition:
    """Parse and validate a virtual sensor definition document.

    Raises SchemaError for structural problems (missing/unknown keys, wrong
    types) and InvariantError for value rules, both carrying a JSON pointer
    to the offending key. ``sampling_interval_ms`` defaults to 1000.
    """
    if isinstance(document, (bytes, str)):
        try:
            document = json.loads(document)
        except ValueError as exc:
            raise SchemaError(f"invalid JSON: {exc}") from None
    _require(isinstance(document, dict), "VSD must be a JSON object")
    _check_keys(document, _VSD_KEYS, _VSD_REQUIRED, "")

    b = document["binding"]
    _require(isinstance(b, dict), "expected an object", "/binding")
    _check_keys(b, _BINDING_KEYS, _BINDING_REQUIRED, "/binding")
    _expect_str(b, "plugin_id", "/binding")
    transport = _expect_str(b, "transport", "/binding")
    _require(transport in TRANSPORTS, f"transport must be one of {TRANSPORTS}",
             "/binding/transport")
    command = b.get("command")
    if command is not None:
        _require(isinstance(command, list) and all(isinstance(c, str) for c in command),
                 "command must be an array of strings", "/binding/command")
    config = b["config"]
    _require(isinstance(config, dict), "expected an object", "/binding/config")
    for k, v in config.items():
        _require(isinstance(v, str), "config values must be strings",
                 f"/binding/config/{k}")

    w = document["window"]
    _require(isinstance(w, dict), "expected an object", "/window")
    _check_keys(w, {"kind", "size"}, {"kind", "size"}, "/window")
    kind = _expect_str(w, "kind", "/window")
    _require(kind in WINDOW_KINDS, f"kind must be one of {WINDOW_KINDS}", "/window/kind")
    size = _expect_int(w, "size", "/window")

    aggs_doc = document["aggregations"]
    _require(isinstance(aggs_doc, list), "expected an array", "/aggregations")
    aggs = []
    for i, a in enumerate(aggs_doc):
        p = f"/aggregations/{i}"
        _require(isinstance(a, dict), "expected an object", p)
        _check_keys(a, {"field", "fn"}, {"field", "fn"}, p)
        fn = _expect_str(a, "fn", p)
        _require(fn in AGGREGATION_FNS, f"fn must be one of {AGGREGATION_FNS}", f"{p}/fn")
        aggs.append(Aggregation(_expect_str(a, "field", p), fn))

    name = _expect_str(document, "name", "")
    emit = _expect_int(document, "emit_interval_ms", "")
    history = _expect_int(document, "history_size", "")
    sampling = 1000
    if "sampling_interval_ms" in document:
        sampling = _expect_int(document, "sampling_interval_ms", "")
    description = None
    if "description" in document:
        description = _expect_str(document, "description", "")

    try:
        return VirtualSensorDefinition(
            name=name,
            binding=PluginBinding(
                plugin_id=b["plugin_id"],
                transport=transport,
                command=tuple(command) if command else None,
                config=dict(config),
            ),
            window=WindowSpec(kind, size),
            aggregations=tuple(aggs),
            emit_interval_ms=emit,
            history_size=history,
            sampling_interval_ms=sampling,
            description=description,
        )
    except InvariantError:
        raise
    except MosdenError as exc:
        raise InvariantError(str(exc)) from None


def serialize_vsd(vsd: VirtualSensorDefinition) -> bytes:
    """Canonical VSD JSON; parse_vsd(serialize_vsd(v)) == v."""
    binding: dict[str, Any] = {
        "plugin_id": vsd.binding.plugin_id,
        "transport": vsd.binding.transport,
    }
    if vsd.binding.command:
        binding["command"] = list(vsd.binding.command)
    binding["config"] = dict(vsd.binding.config)
    doc: dict[str, Any] = {
        "name": vsd.name,
        "binding": binding,
        "sampling_interval_ms": vsd.sampling_interval_ms,
        "window": {"kind": vsd.window.kind, "size": vsd.window.size},
        "aggregations": [{"field": a.field, "fn": a.fn} for a in vsd.aggregations],
        "emit_interval_ms": vsd.emit_interval_ms,
        "history_size": vsd.history_size,
    }
    if vsd.description is not None:
        doc["description"] = vsd.description
    return canonical_json_bytes(doc)
