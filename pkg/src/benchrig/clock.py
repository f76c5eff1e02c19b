"""Injectable clocks.

Services that reason about real time (registry leases, wall-clock scenario
execution) take a Clock so tests can drive expiry and schedules
deterministically. Virtual evaluation time is a separate concept handled by
the pipeline's dataflow scheduler (see pipeline.VirtualLane), not a Clock.
"""

from __future__ import annotations

import threading
import time
from typing import Protocol

__all__ = ["Clock", "WallClock", "FakeClock"]


class Clock(Protocol):
    def now_ns(self) -> int: ...

    def sleep_until_ns(self, deadline_ns: int) -> None: ...


class WallClock:
    """Real time in nanoseconds since the epoch."""

    def now_ns(self) -> int:
        return time.time_ns()

    def sleep_until_ns(self, deadline_ns: int) -> None:
        while True:
            remaining = deadline_ns - self.now_ns()
            if remaining <= 0:
                return
            time.sleep(remaining / 1e9)


class FakeClock:
    """Manually advanced clock for deterministic tests."""

    def __init__(self, start_ns: int = 0):
        self._now_ns = start_ns
        self._lock = threading.Lock()

    def now_ns(self) -> int:
        with self._lock:
            return self._now_ns

    def advance_ns(self, delta_ns: int) -> None:
        with self._lock:
            self._now_ns += delta_ns

    def advance_seconds(self, seconds: float) -> None:
        self.advance_ns(int(round(seconds * 1e9)))

    def sleep_until_ns(self, deadline_ns: int) -> None:
        # A fake clock never blocks; it jumps to the deadline.
        with self._lock:
            if deadline_ns > self._now_ns:
                self._now_ns = deadline_ns
