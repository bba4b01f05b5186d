"""Independent brute-force reference folds used to cross-check the store.

Deliberately written against the documented contract only: plain lists of
(timestamp, values) pairs, explicit scans, math.fsum for compensated
summation. Keep this file free of imports from mosden.store so a bug there
cannot leak into its own oracle.
"""

from __future__ import annotations

import math
from typing import Any


def select_window(rows: list[tuple[int, dict[str, Any]]], kind: str,
                  size: int, now: int) -> list[tuple[int, dict[str, Any]]]:
    if kind == "count":
        return rows[len(rows) - size:] if size < len(rows) else list(rows)
    picked = []
    for ts, values in rows:
        if now - size < ts <= now:
            picked.append((ts, values))
    return picked


def fold(fn: str, values: list) -> Any:
    if fn == "count":
        return len(values)
    if not values:
        return 0.0 if fn == "sum" else None
    if fn == "last":
        return values[-1]
    if fn == "sum":
        return float(math.fsum(values))
    if fn == "avg":
        return float(math.fsum(values)) / len(values)
    if fn == "min":
        best = values[0]
        for v in values[1:]:
            if v < best:
                best = v
        return best
    if fn == "max":
        best = values[0]
        for v in values[1:]:
            if v > best:
                best = v
        return best
    raise ValueError(f"unknown fn {fn!r}")


def window_aggregate(rows: list[tuple[int, dict[str, Any]]], kind: str,
                     size: int, now: int, field: str, fn: str) -> Any:
    picked = select_window(rows, kind, size, now)
    return fold(fn, [values[field] for _, values in picked])


def agg_close(got: Any, want: Any, magnitude: float,
              rel: float = 1e-9) -> bool:
    """Compare two aggregate values; floats within rel of the data scale.

    magnitude should be the summed absolute input (the natural scale for
    cancellation error in a float fold).
    """
    if got is None or want is None:
        return got is None and want is None
    if isinstance(want, float) or isinstance(got, float):
        return abs(got - want) <= rel * max(1.0, abs(want), magnitude)
    return got == want
