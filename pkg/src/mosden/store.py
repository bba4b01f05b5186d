"""Bounded per-virtual-sensor history store and windowed aggregation.

The store is a ring of the most recent ``history_size`` elements, written
by exactly one sampling task and read by queries and delivery loops.
Aggregation turns a window of raw samples into one emitted result, which is
what makes a once-a-minute average cost one transmission instead of sixty.
"""

from __future__ import annotations

import logging
import os
import threading
from collections import deque
from dataclasses import dataclass
from typing import Any, Iterable, Sequence

from .model import (
    Aggregation,
    DataField,
    MosdenError,
    NUMERIC_AGGREGATION_FNS,
    StreamElement,
    TypeMismatch,
    VirtualSensorDefinition,
    WindowSpec,
    canonical_json_bytes,
    parse_stream_element,
    serialize_stream_element,
    validate_element_against_schema,
)

log = logging.getLogger(__name__)

__all__ = ["StreamStore", "WindowResult", "OutOfOrderTimestamp", "evaluate_window",
           "emit_tick", "check_aggregations_against_schema"]


class OutOfOrderTimestamp(MosdenError):
    """Append rejected: element is older than the newest stored one."""


@dataclass(frozen=True)
class WindowResult:
    """Aggregation output for one window evaluation.

    ``agg_values`` is keyed "field.fn"; empty windows carry None for
    avg/min/max/last, 0.0 for sum, and 0 for count.
    """

    vs_name: str
    window_end: int
    agg_values: dict[str, Any]
    sample_count: int

    def to_jsonable(self) -> dict[str, Any]:
        return {
            "kind": "window_result",
            "vs_name": self.vs_name,
            "window_end": self.window_end,
            "agg_values": dict(self.agg_values),
            "sample_count": self.sample_count,
        }


def check_aggregations_against_schema(
    aggregations: Sequence[Aggregation], schema: Sequence[DataField]
) -> None:
    """Raise MosdenError naming the first aggregation that cannot run."""
    by_name = {f.name: f for f in schema}
    for agg in aggregations:
        f = by_name.get(agg.field)
        if f is None:
            raise FieldNotInSchema(agg.field)
        if agg.fn in NUMERIC_AGGREGATION_FNS and f.value_type == "string":
            raise MosdenError(
                f"aggregation {agg.fn} requires a numeric field, "
                f"but {agg.field!r} is a string")


class FieldNotInSchema(MosdenError):
    def __init__(self, field: str):
        super().__init__(f"aggregation field {field!r} not in plugin schema")
        self.field = field


def _select(elements: Sequence[StreamElement], window: WindowSpec,
            now: int) -> list[StreamElement]:
    if window.kind == "count":
        return list(elements[-window.size:])
    lo = now - window.size
    return [e for e in elements if lo < e.timestamp <= now]


def _aggregate_one(fn: str, values: list) -> Any:
    if fn == "count":
        return len(values)
    if not values:
        return 0.0 if fn == "sum" else None
    if fn == "last":
        return values[-1]
    if fn == "sum":
        return float(sum(values))
    if fn == "avg":
        return float(sum(values)) / len(values)
    if fn == "min":
        return min(values)
    return max(values)


def evaluate_window(store: "StreamStore", window: WindowSpec,
                    aggs: Sequence[Aggregation], now: int) -> WindowResult:
    """Evaluate aggregations over the in-window selection of the store.

    Count windows take the last ``size`` elements; time windows take
    timestamps in (now - size, now]. Total function: an empty store or an
    empty selection yields the documented null markers.
    """
    check_aggregations_against_schema(aggs, store.schema)
    elements = store.snapshot()
    selection = _select(elements, window, now)
    index = {f.name: i for i, f in enumerate(store.schema)}
    agg_values: dict[str, Any] = {}
    for agg in aggs:
        column = [e.values[index[agg.field]] for e in selection]
        agg_values[agg.key] = _aggregate_one(agg.fn, column)
    return WindowResult(
        vs_name=store.vs_name,
        window_end=now,
        agg_values=agg_values,
        sample_count=len(selection),
    )


def emit_tick(vsd: VirtualSensorDefinition, store: "StreamStore",
              now: int) -> WindowResult:
    """One scheduled emission: the VSD's own window and aggregation set.

    Raw elements stay in the store untouched; this is what push
    subscriptions deliver and what processed pulls return.
    """
    return evaluate_window(store, vsd.window, vsd.aggregations, now)


class StreamStore:
    """Single-writer, multi-reader bounded element history.

    When ``journal_path`` is set, accepted elements are also appended to a
    JSON-lines file, and an existing journal is replayed (truncated to the
    most recent ``capacity`` rows) at construction.
    """

    def __init__(self, vs_name: str, schema: Sequence[DataField], capacity: int,
                 journal_path: str | None = None):
        if capacity < 1:
            raise MosdenError("store capacity must be >= 1")
        self.vs_name = vs_name
        self.schema = tuple(schema)
        self.capacity = capacity
        self.journal_path = journal_path
        self._ring: deque[StreamElement] = deque(maxlen=capacity)
        self._lock = threading.Lock()
        self.total_appended = 0
        self.rejected_out_of_order = 0
        self._journal_fh = None
        if journal_path:
            self._replay_journal()
            os.makedirs(os.path.dirname(journal_path) or ".", exist_ok=True)
            self._journal_fh = open(journal_path, "ab")

    def _replay_journal(self) -> None:
        if not self.journal_path or not os.path.exists(self.journal_path):
            return
        with open(self.journal_path, "rb") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                try:
                    self._ring.append(parse_stream_element(self.schema, line))
                    self.total_appended += 1
                except MosdenError:
                    log.warning("skipping bad journal line in %s", self.journal_path)

    def append(self, e: StreamElement) -> None:
        """Append at the tail, evicting the oldest element over capacity."""
        violations = validate_element_against_schema(self.schema, e)
        if violations:
            raise TypeMismatch(violations)
        with self._lock:
            if self._ring and e.timestamp < self._ring[-1].timestamp:
                self.rejected_out_of_order += 1
                raise OutOfOrderTimestamp(
                    f"{self.vs_name}: {e.timestamp} < {self._ring[-1].timestamp}")
            self._ring.append(e)
            self.total_appended += 1
            if self._journal_fh is not None:
                self._journal_fh.write(serialize_stream_element(self.schema, e) + b"\n")
                self._journal_fh.flush()

    def snapshot(self) -> list[StreamElement]:
        """Consistent copy of the ring, oldest first."""
        with self._lock:
            return list(self._ring)

    def latest(self) -> StreamElement | None:
        with self._lock:
            return self._ring[-1] if self._ring else None

    def query_raw(self, window: WindowSpec, now: int | None = None) -> list[StreamElement]:
        """In-window raw elements, oldest first; never mutates the store."""
        elements = self.snapshot()
        if window.kind == "time" and now is None:
            now = elements[-1].timestamp if elements else 0
        return _select(elements, window, now if now is not None else 0)

    def __len__(self) -> int:
        with self._lock:
            return len(self._ring)

    def close(self) -> None:
        if self._journal_fh is not None:
            self._journal_fh.close()
            self._journal_fh = None


def elements_to_jsonable(schema: Sequence[DataField],
                         elements: Iterable[StreamElement]) -> list[dict[str, Any]]:
    """Element dicts in canonical key order, ready for embedding in JSON."""
    out = []
    for e in elements:
        out.append({"timestamp": e.timestamp,
                    "values": {f.name: v for f, v in zip(schema, e.values)}})
    return out
