"""Virtual time base for deterministic simulation.

All simulated components take time as an argument instead of reading a wall
clock.  A single :class:`Scheduler` owns the clock and a priority queue of
timed callbacks; running the queue advances virtual time monotonically, so a
40-second transfer simulates in milliseconds of wall time and replays
identically for a given configuration.
"""

from __future__ import annotations

import heapq
import itertools
from typing import Any, Callable, Optional


class VirtualClock:
    """Monotonic simulated time in seconds."""

    def __init__(self, start: float = 0.0):
        self._now = float(start)

    @property
    def now(self) -> float:
        return self._now

    def advance_to(self, t: float) -> None:
        if t < self._now:
            raise ValueError(f"clock cannot move backwards: {t} < {self._now}")
        self._now = t


class _Event:
    __slots__ = ("when", "seq", "fn", "args", "cancelled")

    def __init__(self, when: float, seq: int, fn: Callable, args: tuple):
        self.when = when
        self.seq = seq
        self.fn = fn
        self.args = args
        self.cancelled = False

    def __lt__(self, other: "_Event") -> bool:
        return (self.when, self.seq) < (other.when, other.seq)

    def cancel(self) -> None:
        self.cancelled = True


class Scheduler:
    """Priority queue of timed callbacks on a virtual clock.

    Events scheduled for the same instant run in scheduling order, which
    keeps packet delivery FIFO per link and makes every run reproducible.
    """

    def __init__(self, clock: Optional[VirtualClock] = None):
        self.clock = clock or VirtualClock()
        self._heap: list[_Event] = []
        self._seq = itertools.count()

    @property
    def now(self) -> float:
        return self.clock.now

    def call_at(self, when: float, fn: Callable, *args: Any) -> _Event:
        if when < self.clock.now:
            when = self.clock.now
        event = _Event(when, next(self._seq), fn, args)
        heapq.heappush(self._heap, event)
        return event

    def call_later(self, delay: float, fn: Callable, *args: Any) -> _Event:
        return self.call_at(self.clock.now + delay, fn, *args)

    def next_event_time(self) -> Optional[float]:
        while self._heap and self._heap[0].cancelled:
            heapq.heappop(self._heap)
        return self._heap[0].when if self._heap else None

    def _pop_due(self, deadline: float) -> Optional[_Event]:
        while self._heap:
            if self._heap[0].cancelled:
                heapq.heappop(self._heap)
                continue
            if self._heap[0].when <= deadline:
                return heapq.heappop(self._heap)
            return None
        return None

    def run_until(self, deadline: float) -> None:
        """Run every event due up to *deadline*, then set the clock there."""
        while True:
            event = self._pop_due(deadline)
            if event is None:
                break
            self.clock.advance_to(max(event.when, self.clock.now))
            event.fn(*event.args)
        if deadline > self.clock.now:
            self.clock.advance_to(deadline)

    def run_until_idle(self, max_time: float = 1e9) -> None:
        """Drain the queue, advancing time as needed, up to *max_time*."""
        while True:
            nxt = self.next_event_time()
            if nxt is None or nxt > max_time:
                break
            self.run_until(nxt)
