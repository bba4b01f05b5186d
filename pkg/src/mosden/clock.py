"""Clock abstraction and periodic task scheduling.

All time-dependent behavior in the node goes through a Clock so tests and
benchmarks can substitute a manually stepped MockClock and get exact,
repeatable scheduling. Periodic tasks run at a fixed rate without catch-up
bursts: when a tick overruns its interval, the next tick fires immediately
and the missed ticks are skipped.
"""

from __future__ import annotations

import heapq
import itertools
import logging
import threading
import time
from typing import Callable

log = logging.getLogger(__name__)

__all__ = ["Clock", "SystemClock", "MockClock", "TaskHandle"]


class TaskHandle:
    """Cancellation handle for a scheduled periodic task."""

    def __init__(self, name: str):
        self.name = name
        self._cancelled = threading.Event()

    def cancel(self) -> None:
        self._cancelled.set()

    @property
    def cancelled(self) -> bool:
        return self._cancelled.is_set()


class Clock:
    """Time source plus periodic-task scheduler."""

    def now_ms(self) -> int:
        """Wall-clock milliseconds since the Unix epoch."""
        raise NotImplementedError

    def mono_ms(self) -> float:
        """Monotonic milliseconds, immune to wall-clock steps."""
        raise NotImplementedError

    def sleep(self, ms: float) -> None:
        raise NotImplementedError

    def schedule_periodic(self, name: str, interval_ms: int,
                          fn: Callable[[], None]) -> TaskHandle:
        """Run ``fn`` every ``interval_ms``, first at now + interval_ms.

        Exceptions from ``fn`` are logged and do not stop the task.
        """
        raise NotImplementedError


def _next_due(due: float, interval_ms: int, now: float) -> float:
    # Fixed-rate advance; an overrun fires once immediately, then realigns.
    due += interval_ms
    return now if due < now else due


class SystemClock(Clock):
    """Real time; each periodic task runs on its own daemon thread."""

    def now_ms(self) -> int:
        return int(time.time() * 1000)

    def mono_ms(self) -> float:
        return time.monotonic() * 1000.0

    def sleep(self, ms: float) -> None:
        if ms > 0:
            time.sleep(ms / 1000.0)

    def schedule_periodic(self, name: str, interval_ms: int,
                          fn: Callable[[], None]) -> TaskHandle:
        handle = TaskHandle(name)

        def loop() -> None:
            due = self.mono_ms() + interval_ms
            while True:
                delay = max(0.0, due - self.mono_ms()) / 1000.0
                if handle._cancelled.wait(delay):
                    return
                try:
                    fn()
                except Exception:
                    log.exception("periodic task %s failed", name)
                due = _next_due(due, interval_ms, self.mono_ms())

        threading.Thread(target=loop, name=f"mosden-{name}", daemon=True).start()
        return handle


class _MockTask:
    __slots__ = ("due", "seq", "interval_ms", "fn", "handle")

    def __init__(self, due: float, seq: int, interval_ms: int,
                 fn: Callable[[], None], handle: TaskHandle):
        self.due = due
        self.seq = seq
        self.interval_ms = interval_ms
        self.fn = fn
        self.handle = handle

    def __lt__(self, other: "_MockTask") -> bool:
        return (self.due, self.seq) < (other.due, other.seq)


class MockClock(Clock):
    """Manually stepped clock for deterministic tests and benchmarks.

    ``advance(ms)`` moves time forward, running each due task with the
    clock set to its due instant. Due ties run in registration order.
    ``sleep`` from within a task advances time without re-entering the
    scheduler; skipped ticks follow the no-burst rule on the next advance.
    """

    def __init__(self, start_ms: int = 1_700_000_000_000):
        self._now = float(start_ms)
        self._seq = itertools.count()
        self._heap: list[_MockTask] = []
        self._lock = threading.RLock()

    def now_ms(self) -> int:
        return int(self._now)

    def mono_ms(self) -> float:
        return self._now

    def sleep(self, ms: float) -> None:
        with self._lock:
            self._now += max(0.0, ms)

    def schedule_periodic(self, name: str, interval_ms: int,
                          fn: Callable[[], None]) -> TaskHandle:
        handle = TaskHandle(name)
        with self._lock:
            task = _MockTask(self._now + interval_ms, next(self._seq),
                             interval_ms, fn, handle)
            heapq.heappush(self._heap, task)
        return handle

    def advance(self, ms: float) -> None:
        with self._lock:
            target = self._now + ms
            while self._heap and self._heap[0].due <= target:
                task = heapq.heappop(self._heap)
                if task.handle.cancelled:
                    continue
                if task.due > self._now:
                    self._now = task.due
                try:
                    task.fn()
                except Exception:
                    log.exception("periodic task %s failed", task.handle.name)
                if not task.handle.cancelled:
                    task.due = _next_due(task.due, task.interval_ms, self._now)
                    heapq.heappush(self._heap, task)
            self._now = max(self._now, target)
