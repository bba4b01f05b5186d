from __future__ import annotations

import json

import pytest

from mosden.model import (
    Aggregation,
    CostParameters,
    DataField,
    InvariantError,
    PluginBinding,
    SchemaError,
    StreamElement,
    Subscription,
    TypeMismatch,
    VirtualSensorDefinition,
    WindowSpec,
    canonical_json_bytes,
    parse_stream_element,
    parse_vsd,
    schema_from_jsonable,
    schema_to_jsonable,
    serialize_stream_element,
    serialize_vsd,
    validate_element_against_schema,
)

SCHEMA = (DataField("temp", "double", "celsius"),
          DataField("n", "integer"),
          DataField("label", "string"))


# --- fields and schemas


def test_data_field_rejects_bad_names():
    for bad in ("Temp", "1temp", "temp-x", "", "temp field"):
        with pytest.raises(InvariantError):
            DataField(bad, "double")


def test_data_field_rejects_unknown_type():
    with pytest.raises(InvariantError):
        DataField("temp", "float64")


def test_accepts_is_strict_about_bool():
    f = DataField("n", "integer")
    assert f.accepts(3)
    assert not f.accepts(True)
    assert not f.accepts(3.0)


def test_double_field_coerces_json_ints():
    f = DataField("temp", "double")
    assert f.coerce(21) == 21.0
    assert isinstance(f.coerce(21), float)
    assert f.coerce(21.5) == 21.5


def test_schema_jsonable_round_trip():
    back = schema_from_jsonable(schema_to_jsonable(SCHEMA))
    assert tuple(back) == SCHEMA


def test_schema_rejects_duplicate_names():
    with pytest.raises((SchemaError, InvariantError)):
        schema_from_jsonable([{"name": "a", "value_type": "double"},
                              {"name": "a", "value_type": "double"}])


def test_schema_rejects_empty():
    with pytest.raises(SchemaError):
        schema_from_jsonable([])


# --- elements and canonical bytes


def test_canonical_json_is_compact_and_ordered():
    got = canonical_json_bytes({"b": 1, "a": [1.5, "x"]})
    assert got == b'{"b":1,"a":[1.5,"x"]}'


def test_canonical_json_keeps_unicode():
    assert canonical_json_bytes({"s": "grüß"}) == '{"s":"grüß"}'.encode("utf-8")


def test_serialize_orders_by_schema_not_input():
    e = parse_stream_element(
        SCHEMA, {"values": {"label": "a", "n": 2, "temp": 1}, "timestamp": 5})
    got = serialize_stream_element(SCHEMA, e)
    assert got == b'{"timestamp":5,"values":{"temp":1.0,"n":2,"label":"a"}}'


def test_parse_accepts_bytes_str_and_dict():
    doc = {"timestamp": 1, "values": {"temp": 2.0, "n": 3, "label": "x"}}
    for variant in (doc, json.dumps(doc), json.dumps(doc).encode()):
        e = parse_stream_element(SCHEMA, variant)
        assert e.timestamp == 1
        assert e.values == (2.0, 3, "x")


def test_parse_rejects_missing_and_extra_fields():
    with pytest.raises(SchemaError):
        parse_stream_element(SCHEMA, {"timestamp": 1, "values": {"temp": 2.0}})
    with pytest.raises(SchemaError):
        parse_stream_element(SCHEMA, {
            "timestamp": 1,
            "values": {"temp": 2.0, "n": 3, "label": "x", "bogus": 1}})


def test_parse_rejects_wrong_types():
    with pytest.raises(TypeMismatch) as err:
        parse_stream_element(SCHEMA, {
            "timestamp": 1, "values": {"temp": "hot", "n": 3, "label": "x"}})
    assert any("temp" in str(v) for v in err.value.violations)


def test_parse_rejects_bool_timestamp():
    with pytest.raises(SchemaError):
        parse_stream_element(SCHEMA, {
            "timestamp": True, "values": {"temp": 1.0, "n": 1, "label": "x"}})


def test_validate_is_total():
    bad = StreamElement(0, ("oops", 1, "x"))
    violations = validate_element_against_schema(SCHEMA, bad)
    assert [v.kind for v in violations] == ["type_mismatch"]
    assert validate_element_against_schema(SCHEMA, StreamElement(0, (1.0, 1, "x"))) == []


def test_serialize_refuses_invalid_element():
    with pytest.raises(TypeMismatch):
        serialize_stream_element(SCHEMA, StreamElement(0, (1.0, 2.5, "x")))


# --- binding / window / aggregation invariants


def test_binding_command_required_iff_subprocess():
    with pytest.raises(InvariantError):
        PluginBinding(plugin_id="p", transport="subprocess", config={})
    with pytest.raises(InvariantError):
        PluginBinding(plugin_id="p", transport="in_process",
                      command=("x",), config={})
    ok = PluginBinding(plugin_id="p", transport="subprocess",
                       command=("prog", "--flag"), config={})
    assert ok.command == ("prog", "--flag")


def test_binding_config_must_be_string_map():
    with pytest.raises(InvariantError):
        PluginBinding(plugin_id="p", transport="in_process",
                      config={"seed": 3})


def test_window_spec_validation():
    with pytest.raises(InvariantError):
        WindowSpec("count", 0)
    with pytest.raises(InvariantError):
        WindowSpec("sliding", 10)
    assert WindowSpec("time", 5000).size == 5000


def test_aggregation_key():
    assert Aggregation("temp", "avg").key == "temp.avg"
    with pytest.raises(InvariantError):
        Aggregation("temp", "median")


def _vsd(**overrides) -> VirtualSensorDefinition:
    base = dict(
        name="room",
        binding=PluginBinding(plugin_id="p", transport="in_process",
                              config={}),
        window=WindowSpec("count", 10),
        aggregations=(Aggregation("temp", "avg"),),
        emit_interval_ms=2000,
        history_size=100,
        sampling_interval_ms=1000)
    base.update(overrides)
    return VirtualSensorDefinition(**base)


def test_vsd_emit_must_cover_sampling():
    with pytest.raises(InvariantError):
        _vsd(emit_interval_ms=500)
    assert _vsd(emit_interval_ms=1000).emit_interval_ms == 1000


def test_vsd_needs_aggregations():
    with pytest.raises(InvariantError):
        _vsd(aggregations=())


def test_vsd_serialization_round_trip():
    vsd = _vsd(description="demo")
    again = parse_vsd(serialize_vsd(vsd))
    assert again == vsd


def test_parse_vsd_rejects_junk():
    with pytest.raises(SchemaError):
        parse_vsd(b"not json at all")
    with pytest.raises(SchemaError):
        parse_vsd({"name": "x"})


def test_parse_vsd_subprocess_round_trip():
    vsd = _vsd(binding=PluginBinding(
        plugin_id="p", transport="subprocess", command=("prog", "-x"),
        config={"seed": "1"}))
    again = parse_vsd(serialize_vsd(vsd))
    assert again.binding.command == ("prog", "-x")


# --- subscriptions and costs


def test_subscription_validation():
    sub = Subscription(id="s1", vs_name="room", mode="push",
                       interval_ms=1000, expiry=10_000,
                       delivery_endpoint="http://example.invalid/sink")
    doc = sub.to_jsonable()
    assert doc["id"] == "s1" and doc["payload_kind"] == "processed"
    with pytest.raises(InvariantError):
        Subscription(id="s1", vs_name="room", mode="stream",
                     interval_ms=1000, expiry=1)
    with pytest.raises(InvariantError):
        Subscription(id="s1", vs_name="room", mode="pull",
                     interval_ms=0, expiry=1)
    with pytest.raises(InvariantError):
        Subscription(id="s1", vs_name="room", mode="push", interval_ms=1000,
                     expiry=1, payload_kind="jpeg")


def test_cost_parameters_validation():
    with pytest.raises(InvariantError):
        CostParameters(-1.0, 0.0, 0.0)
    params = CostParameters.from_jsonable(
        {"c_proc_per_sample": 1, "c_radio_wake": 2.5, "c_per_byte": 0})
    assert params.c_radio_wake == 2.5
    assert CostParameters.from_jsonable(params.to_jsonable()) == params
    # omitted coefficients default to zero cost
    assert CostParameters.from_jsonable({}).c_per_byte == 0.0
    with pytest.raises(SchemaError):
        CostParameters.from_jsonable({"c_proc_per_sample": 1.0, "c_cpu": 2.0})
