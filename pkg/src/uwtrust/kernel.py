"""Discrete-event kernel: clock, priority queue, labeled RNG streams.

Time is continuous (seconds, float). Events fire in (time, insertion order)
order, so two events scheduled for the same instant run FIFO. Scheduling an
event in the past is a hard error rather than a silent clamp; replaying the
same scenario with the same seed must produce the identical event sequence.
"""

from __future__ import annotations

import hashlib
import heapq
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Optional

import numpy as np

SimTime = float


class EventKind(Enum):
    PACKET_ARRIVAL = "packet-arrival"
    WINDOW_CLOSE = "window-close"
    TRUST_TICK = "trust-tick"
    CONSENSUS_TICK = "consensus-tick"
    MOBILITY_TICK = "mobility-tick"
    ATTACK_TOGGLE = "attack-toggle"
    DUTY_CYCLE_TICK = "duty-cycle-tick"
    # Internal bookkeeping kinds used by the transport layer.
    RETRY = "retry"
    BUFFER_SWEEP = "buffer-sweep"
    # Validator-to-validator traffic on the surface links.
    CONSENSUS_MSG = "consensus-msg"
    CONSENSUS_TIMEOUT = "consensus-timeout"


@dataclass(order=True)
class _QueueEntry:
    fire_at: SimTime
    seq: int
    event: "Event" = field(compare=False)


@dataclass
class Event:
    fire_at: SimTime
    kind: EventKind
    data: dict[str, Any] = field(default_factory=dict)
    eid: int = -1                      # assigned by the engine on schedule
    cancelled: bool = False

    def cancel(self) -> None:
        self.cancelled = True


class Engine:
    """Event loop. Handlers are registered per event kind.

    A handler receives (engine, event). Events may schedule further events
    at or after the current clock time.
    """

    def __init__(self) -> None:
        self.now: SimTime = 0.0
        self._heap: list[_QueueEntry] = []
        self._seq = 0
        self._handlers: dict[EventKind, list[Callable[["Engine", Event], None]]] = {}
        self._trace: Optional[list[tuple[SimTime, int, str]]] = None
        self.events_processed = 0

    def subscribe(self, kind: EventKind, handler: Callable[["Engine", Event], None]) -> None:
        self._handlers.setdefault(kind, []).append(handler)

    def enable_trace(self) -> None:
        self._trace = []

    @property
    def trace(self) -> list[tuple[SimTime, int, str]]:
        if self._trace is None:
            raise RuntimeError("tracing was not enabled")
        return self._trace

    def schedule(self, fire_at: SimTime, kind: EventKind,
                 data: Optional[dict[str, Any]] = None) -> Event:
        if fire_at < self.now:
            raise ValueError(
                f"cannot schedule {kind.value} at t={fire_at} before now={self.now}")
        ev = Event(fire_at=fire_at, kind=kind, data=data or {})
        ev.eid = self._seq
        heapq.heappush(self._heap, _QueueEntry(fire_at, self._seq, ev))
        self._seq += 1
        return ev

    def schedule_in(self, delay: SimTime, kind: EventKind,
                    data: Optional[dict[str, Any]] = None) -> Event:
        if delay < 0:
            raise ValueError(f"negative delay {delay}")
        return self.schedule(self.now + delay, kind, data)

    def run(self, until: Optional[SimTime] = None) -> None:
        """Process events in order until the queue drains or `until` passes.

        Events with fire_at <= until are processed; the clock never exceeds
        `until` when given.
        """
        while self._heap:
            if until is not None and self._heap[0].fire_at > until:
                self.now = until
                return
            entry = heapq.heappop(self._heap)
            ev = entry.event
            if ev.cancelled:
                continue
            self.now = entry.fire_at
            if self._trace is not None:
                self._trace.append((self.now, entry.seq, ev.kind.value))
            self.events_processed += 1
            for handler in self._handlers.get(ev.kind, ()):
                handler(self, ev)
        if until is not None:
            self.now = until


def rng_stream(seed: int, label: str) -> np.random.Generator:
    """Independent deterministic generator for (seed, label).

    The 128-bit Philox key is the truncated SHA-256 of the seed and label,
    so streams never overlap and adding a stream never perturbs the others.
    """
    if seed < 0:
        raise ValueError("seed must be non-negative")
    digest = hashlib.sha256(f"{seed}\x1f{label}".encode("utf-8")).digest()
    key = int.from_bytes(digest[:16], "big")
    return np.random.Generator(np.random.Philox(key=key))
