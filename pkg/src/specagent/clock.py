"""Token-denominated virtual time and the pending-event queue.

Time is counted in generated tokens. Real delays (speech arrival, tool
latency) convert to tokens through a per-session tokens-per-second rate;
the conversion takes the ceiling so an event never becomes ready earlier
than its real-time delay. Events pop in (due, insertion) order, which
makes simultaneous arrivals deterministic.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from decimal import Decimal
from fractions import Fraction
from typing import Any

RATE_RANGE = (100.0, 200.0)  # tokens/second sampling bounds per session


class EmptyQueueError(Exception):
    """Advance requested with nothing scheduled: the forbidden idle pause."""


class BudgetOverrunError(Exception):
    """More tokens charged than the granted budget: a simulator bug."""


def seconds_to_tokens(seconds: float, rate: float) -> int:
    """Ceiling of seconds*rate, exact over the shortest-decimal reading.

    Values are interpreted by their repr (0.5, 1.1, ...) rather than their
    binary expansion, so products that are decimally integral stay exact:
    1.1 s at 200 tok/s is 220 tokens, never 221.
    """
    if seconds < 0:
        raise ValueError("seconds must be >= 0")
    if rate <= 0:
        raise ValueError("rate must be > 0")
    exact = Fraction(Decimal(repr(seconds))) * Fraction(Decimal(repr(rate)))
    return math.ceil(exact)


def sample_rate(rng, lo: float = RATE_RANGE[0], hi: float = RATE_RANGE[1]) -> float:
    return rng.uniform(lo, hi)


@dataclass(order=True)
class ScheduledEvent:
    due: int
    seq: int
    payload: Any = field(compare=False)


class EventQueue:
    """Min-heap of scheduled events with a deterministic total order."""

    def __init__(self):
        self._heap: list[ScheduledEvent] = []
        self._seq = 0

    def __len__(self) -> int:
        return len(self._heap)

    def push(self, due: int, payload: Any) -> ScheduledEvent:
        ev = ScheduledEvent(due=due, seq=self._seq, payload=payload)
        self._seq += 1
        heapq.heappush(self._heap, ev)
        return ev

    def peek_due(self) -> int | None:
        return self._heap[0].due if self._heap else None

    def pop(self) -> ScheduledEvent:
        if not self._heap:
            raise EmptyQueueError("pop from empty event queue")
        return heapq.heappop(self._heap)


class VirtualClock:
    """Monotone token time with a tokens-per-second conversion rate."""

    def __init__(self, rate: float, now: int = 0):
        if rate <= 0:
            raise ValueError("rate must be > 0")
        if now < 0:
            raise ValueError("now must be >= 0")
        self.rate = rate
        self.now = now

    def to_tokens(self, seconds: float) -> int:
        return seconds_to_tokens(seconds, self.rate)

    def to_seconds(self, tokens: int) -> float:
        return tokens / self.rate


def budget_until_next(clock: VirtualClock, queue: EventQueue) -> int | None:
    """Tokens the model may generate before the next event is due.

    None means nothing is scheduled (unbounded budget); 0 means an event
    is already due.
    """
    due = queue.peek_due()
    if due is None:
        return None
    return max(0, due - clock.now)


def advance_generation(clock: VirtualClock, queue: EventQueue, tokens_emitted: int) -> None:
    """Roll the clock forward by tokens the model actually generated."""
    if tokens_emitted < 0:
        raise ValueError("tokens_emitted must be >= 0")
    budget = budget_until_next(clock, queue)
    if budget is not None and tokens_emitted > budget:
        raise BudgetOverrunError(
            f"emitted {tokens_emitted} tokens with a budget of {budget}"
        )
    clock.now += tokens_emitted


def advance_to_next(clock: VirtualClock, queue: EventQueue) -> ScheduledEvent:
    """Jump to the earliest pending event and pop it (no backward jumps)."""
    if len(queue) == 0:
        raise EmptyQueueError("nothing scheduled: cannot wait")
    ev = queue.pop()
    if ev.due > clock.now:
        clock.now = ev.due
    return ev
