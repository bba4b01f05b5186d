"""Node counters and streaming latency histograms."""

from __future__ import annotations

import threading
from bisect import bisect_left
from typing import Any

__all__ = ["LatencyHistogram", "NodeCounters"]

# Bucket upper bounds in milliseconds; the last bucket is open-ended.
_BOUNDS = (0.25, 0.5, 1, 2, 5, 10, 20, 50, 100, 200, 500,
           1000, 2000, 5000, 10000, 30000)


class LatencyHistogram:
    """Fixed-bucket streaming histogram; p95 reports a bucket upper bound."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._counts = [0] * (len(_BOUNDS) + 1)
        self._count = 0
        self._sum = 0.0
        self._max = 0.0

    def record(self, value_ms: float) -> None:
        with self._lock:
            self._counts[bisect_left(_BOUNDS, value_ms)] += 1
            self._count += 1
            self._sum += value_ms
            if value_ms > self._max:
                self._max = value_ms

    def snapshot(self) -> dict[str, Any]:
        with self._lock:
            if self._count == 0:
                return {"count": 0, "mean": 0.0, "p95": 0.0, "max": 0.0}
            rank = 0.95 * self._count
            seen = 0
            p95 = float(_BOUNDS[-1])
            for i, c in enumerate(self._counts):
                seen += c
                if seen >= rank:
                    p95 = float(_BOUNDS[i]) if i < len(_BOUNDS) else self._max
                    break
            return {
                "count": self._count,
                "mean": self._sum / self._count,
                "p95": p95,
                "max": self._max,
            }


class NodeCounters:
    """Atomic transmission counters shared across delivery loops."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self.messages_sent = 0
        self.bytes_sent = 0

    def record_send(self, nbytes: int) -> None:
        with self._lock:
            self.messages_sent += 1
            self.bytes_sent += nbytes

    def snapshot(self) -> dict[str, int]:
        with self._lock:
            return {"messages_sent": self.messages_sent, "bytes_sent": self.bytes_sent}
