from __future__ import annotations

import json
import random

import pytest

from mosden.model import (
    Aggregation,
    DataField,
    MosdenError,
    StreamElement,
    WindowSpec,
)
from mosden.store import (
    FieldNotInSchema,
    OutOfOrderTimestamp,
    StreamStore,
    WindowResult,
    check_aggregations_against_schema,
    emit_tick,
    evaluate_window,
)

from oracles import agg_close, window_aggregate

SCHEMA = (DataField("temp", "double", "celsius"), DataField("hits", "integer"))


def make_store(rows, capacity=10_000, journal_path=None):
    store = StreamStore("vs", SCHEMA, capacity, journal_path=journal_path)
    for ts, temp, hits in rows:
        store.append(StreamElement(ts, (float(temp), hits)))
    return store


def test_append_and_snapshot_order():
    store = make_store([(1, 1.0, 1), (2, 2.0, 2), (3, 3.0, 3)])
    assert [e.timestamp for e in store.snapshot()] == [1, 2, 3]
    assert store.latest().timestamp == 3
    assert len(store) == 3


def test_capacity_drops_oldest():
    store = make_store([(i, float(i), i) for i in range(10)], capacity=4)
    assert [e.timestamp for e in store.snapshot()] == [6, 7, 8, 9]
    assert store.total_appended == 10


def test_equal_timestamps_accepted_regression_rejected():
    store = make_store([(5, 1.0, 1)])
    store.append(StreamElement(5, (2.0, 2)))  # equal is legal
    with pytest.raises(OutOfOrderTimestamp):
        store.append(StreamElement(4, (3.0, 3)))
    assert store.rejected_out_of_order == 1
    assert len(store) == 2


def test_append_validates_against_schema():
    store = make_store([])
    with pytest.raises(MosdenError):
        store.append(StreamElement(1, ("cold", 1)))
    assert len(store) == 0


def test_empty_store_aggregates_to_null_markers():
    store = make_store([])
    result = evaluate_window(
        store, WindowSpec("count", 10),
        [Aggregation("temp", fn) for fn in ("count", "avg", "min", "max",
                                            "sum", "last")], now=100)
    assert result.agg_values == {
        "temp.count": 0, "temp.avg": None, "temp.min": None,
        "temp.max": None, "temp.sum": 0.0, "temp.last": None}
    assert result.sample_count == 0


def test_count_window_takes_last_n():
    store = make_store([(i, float(i), i) for i in range(10)])
    result = evaluate_window(store, WindowSpec("count", 3),
                             [Aggregation("temp", "avg")], now=9)
    assert result.agg_values["temp.avg"] == 8.0
    assert result.sample_count == 3


def test_time_window_is_half_open():
    store = make_store([(1000, 1.0, 1), (2000, 2.0, 2), (3000, 3.0, 3)])
    # (now - size, now]: 1000 excluded, 3000 included
    result = evaluate_window(store, WindowSpec("time", 2000),
                             [Aggregation("temp", "sum")], now=3000)
    assert result.agg_values["temp.sum"] == 5.0


def test_integer_field_avg_widens_to_float():
    store = make_store([(1, 0.0, 1), (2, 0.0, 2)])
    result = evaluate_window(store, WindowSpec("count", 10),
                             [Aggregation("hits", "avg"),
                              Aggregation("hits", "min")], now=2)
    assert result.agg_values["hits.avg"] == 1.5
    assert isinstance(result.agg_values["hits.avg"], float)
    assert result.agg_values["hits.min"] == 1
    assert isinstance(result.agg_values["hits.min"], int)


def test_numeric_fn_on_string_field_rejected():
    schema = (DataField("label", "string"),)
    store = StreamStore("vs", schema, 10)
    with pytest.raises(MosdenError):
        evaluate_window(store, WindowSpec("count", 5),
                        [Aggregation("label", "avg")], now=1)
    # count and last stay legal on strings
    store.append(StreamElement(1, ("on",)))
    result = evaluate_window(store, WindowSpec("count", 5),
                             [Aggregation("label", "count"),
                              Aggregation("label", "last")], now=1)
    assert result.agg_values == {"label.count": 1, "label.last": "on"}


def test_unknown_aggregation_field_names_the_field():
    with pytest.raises(FieldNotInSchema) as err:
        check_aggregations_against_schema([Aggregation("hum", "avg")], SCHEMA)
    assert "hum" in str(err.value)


def test_window_result_jsonable_shape():
    result = WindowResult(vs_name="vs", window_end=42,
                          agg_values={"temp.avg": 1.0}, sample_count=3)
    doc = result.to_jsonable()
    assert doc == {"kind": "window_result", "vs_name": "vs", "window_end": 42,
                   "agg_values": {"temp.avg": 1.0}, "sample_count": 3}


def test_emit_tick_uses_given_now():
    store = make_store([(1000, 4.0, 1), (2000, 6.0, 2)])
    from mosden.model import PluginBinding, VirtualSensorDefinition
    vsd = VirtualSensorDefinition(
        name="vs",
        binding=PluginBinding(plugin_id="p", transport="in_process", config={}),
        window=WindowSpec("time", 1500),
        aggregations=(Aggregation("temp", "avg"),),
        emit_interval_ms=1000, history_size=10, sampling_interval_ms=1000)
    result = emit_tick(vsd, store, now=2500)
    assert result.window_end == 2500
    assert result.agg_values["temp.avg"] == 6.0  # only ts=2000 in (1000, 2500]


def test_randomized_against_oracle_small():
    # desk-size spot check; the 10k-case sweep lives in the acceptance suite
    rng = random.Random(0xC0FFEE)
    for _ in range(200):
        n = rng.randrange(0, 120)
        rows = []
        ts = 0
        for _ in range(n):
            ts += rng.randrange(0, 2000)  # duplicates allowed
            rows.append((ts, rng.uniform(-1000.0, 1000.0),
                         rng.randrange(-50, 50)))
        store = make_store(rows, capacity=200)
        kind = rng.choice(("count", "time"))
        size = rng.randrange(1, 40) if kind == "count" else rng.randrange(1, 5000)
        now = ts + rng.randrange(-500, 500)
        field = rng.choice(("temp", "hits"))
        fns = ["count", "avg", "min", "max", "sum", "last"]
        result = evaluate_window(store, WindowSpec(kind, size),
                                 [Aggregation(field, fn) for fn in fns], now)
        kept = [(t, {"temp": float(a), "hits": b}) for t, a, b in rows]
        magnitude = sum(abs(v[field]) for _, v in kept)
        for fn in fns:
            want = window_aggregate(kept, kind, size, now, field, fn)
            got = result.agg_values[f"{field}.{fn}"]
            assert agg_close(got, want, magnitude), (
                f"{fn} over {kind}:{size} at {now}: got {got}, want {want}")


def test_journal_replay_round_trip(tmp_path):
    path = tmp_path / "vs.jsonl"
    store = make_store([(1, 1.5, 1), (2, 2.5, 2)], journal_path=str(path))
    store.close()
    again = StreamStore("vs", SCHEMA, 100, journal_path=str(path))
    assert [e.values for e in again.snapshot()] == [(1.5, 1), (2.5, 2)]
    again.append(StreamElement(3, (3.5, 3)))
    again.close()
    lines = path.read_text().strip().splitlines()
    assert len(lines) == 3
    assert json.loads(lines[0]) == {"timestamp": 1,
                                    "values": {"temp": 1.5, "hits": 1}}


def test_journal_skips_corrupt_lines(tmp_path):
    path = tmp_path / "vs.jsonl"
    path.write_text('{"timestamp":1,"values":{"temp":1.0,"hits":1}}\n'
                    "garbage\n"
                    '{"timestamp":2,"values":{"temp":2.0,"hits":2}}\n')
    store = StreamStore("vs", SCHEMA, 100, journal_path=str(path))
    assert [e.timestamp for e in store.snapshot()] == [1, 2]
    store.close()


def test_query_raw_window_selection():
    store = make_store([(i * 1000, float(i), i) for i in range(1, 6)])
    got = store.query_raw(WindowSpec("count", 2), now=5000)
    assert [e.timestamp for e in got] == [4000, 5000]
    got = store.query_raw(WindowSpec("time", 2500), now=5000)
    assert [e.timestamp for e in got] == [3000, 4000, 5000]
