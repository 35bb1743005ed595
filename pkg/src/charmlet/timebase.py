"""Per-worker clocks: wall or virtual nanoseconds.

Virtual clocks only move when charged (local costs) or merged (message
arrivals, Lamport-style). Wall clocks read the OS monotonic clock and
realize charges by busy-waiting, so wall-mode cost accounting remains
observable in measurements.
"""

from __future__ import annotations

import time


class VirtualClock:
    __slots__ = ("now",)

    virtual = True

    def __init__(self, start: int = 0):
        self.now = int(start)

    def charge(self, ns: int) -> int:
        """Advance by a local cost; returns the new time."""
        self.now += int(ns)
        return self.now

    def merge(self, ts: int) -> int:
        """Advance to ts if it is ahead (message arrival rule)."""
        if ts > self.now:
            self.now = int(ts)
        return self.now


class WallClock:
    __slots__ = ()

    virtual = False

    @property
    def now(self) -> int:
        return time.monotonic_ns()

    def charge(self, ns: int) -> int:
        # busy-wait so the cost shows up in wall measurements
        deadline = time.monotonic_ns() + int(ns)
        while time.monotonic_ns() < deadline:
            pass
        return time.monotonic_ns()

    def merge(self, ts: int) -> int:
        return time.monotonic_ns()


def make_clock(time_mode: str):
    if time_mode == "virtual":
        return VirtualClock()
    if time_mode == "wall":
        return WallClock()
    raise ValueError(f"unknown time mode {time_mode!r}")
