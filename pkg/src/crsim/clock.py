"""Injectable clocks. All times are integer milliseconds."""

from __future__ import annotations

import threading
import time

SECOND = 1_000
MINUTE = 60 * SECOND
HOUR = 60 * MINUTE


class SystemClock:
    """Wall clock. ``sleep`` really sleeps."""

    simulated = False

    def now(self) -> int:
        return int(time.time() * 1000)

    def sleep(self, ms: int) -> None:
        if ms > 0:
            time.sleep(ms / 1000)

    # Work that costs simulated time is free on a real clock.
    def spend(self, ms: int) -> None:
        pass


class SimulatedClock:
    """Deterministic clock advanced only by explicit calls."""

    simulated = True

    def __init__(self, start: int = 0):
        self._now = int(start)
        self._lock = threading.Lock()

    def now(self) -> int:
        with self._lock:
            return self._now

    def advance(self, ms: int) -> int:
        if ms < 0:
            raise ValueError("cannot move a clock backwards")
        with self._lock:
            self._now += int(ms)
            return self._now

    def set(self, t: int) -> None:
        with self._lock:
            if t < self._now:
                raise ValueError("cannot move a clock backwards")
            self._now = int(t)

    def sleep(self, ms: int) -> None:
        if ms > 0:
            self.advance(ms)

    def spend(self, ms: int) -> None:
        if ms > 0:
            self.advance(ms)


def make_clock(mode: str, start: int = 0):
    if mode == "system":
        return SystemClock()
    if mode == "simulated":
        return SimulatedClock(start)
    raise ValueError(f"unknown clock mode {mode!r}")
