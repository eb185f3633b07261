"""Deterministic discrete-event core: integer-nanosecond clock, ordered event
queue with cancellable handles, and seeded per-stream random sources."""

from __future__ import annotations

import hashlib
import heapq
from dataclasses import dataclass
from typing import Any, Callable

import numpy as np

NS_PER_SEC = 1_000_000_000
NS_PER_MS = 1_000_000
NS_PER_US = 1_000


def seconds(value: float) -> int:
    """Convert seconds to integer nanoseconds."""
    return int(round(value * NS_PER_SEC))


def millis(value: float) -> int:
    """Convert milliseconds to integer nanoseconds."""
    return int(round(value * NS_PER_MS))


def to_seconds(ns: int) -> float:
    return ns / NS_PER_SEC


class SchedulingError(RuntimeError):
    """Raised when an event is scheduled before the current clock."""


class Event:
    """A scheduled action. The object itself is the cancellation handle."""

    __slots__ = ("fire_at", "seq_no", "action", "args", "cancelled")

    def __init__(self, fire_at: int, seq_no: int, action: Callable[..., Any], args: tuple):
        self.fire_at = fire_at
        self.seq_no = seq_no
        self.action = action
        self.args = args
        self.cancelled = False

    def cancel(self) -> None:
        self.cancelled = True

    def __repr__(self) -> str:
        name = getattr(self.action, "__qualname__", repr(self.action))
        return f"Event(fire_at={self.fire_at}, seq_no={self.seq_no}, action={name})"


@dataclass(frozen=True)
class EngineStats:
    events_processed: int
    clock: int


class Engine:
    """Single-threaded event loop.

    Heap entries are ``(fire_at, seq_no, event)``; ``seq_no`` is unique so the
    comparison never reaches the event object and ties resolve in insertion
    order.
    """

    def __init__(self) -> None:
        self.now = 0
        self._heap: list[tuple[int, int, Event]] = []
        self._seq = 0
        self.events_processed = 0
        self._stop = False
        self.observer: Callable[[Event], None] | None = None

    def schedule(self, fire_at: int, action: Callable[..., Any], *args: Any) -> Event:
        if fire_at < self.now:
            raise SchedulingError(f"cannot schedule at {fire_at} ns, clock is already {self.now} ns")
        ev = Event(int(fire_at), self._seq, action, args)
        self._seq += 1
        heapq.heappush(self._heap, (ev.fire_at, ev.seq_no, ev))
        return ev

    def after(self, delay: int, action: Callable[..., Any], *args: Any) -> Event:
        return self.schedule(self.now + delay, action, *args)

    @staticmethod
    def cancel(handle: Event | None) -> None:
        if handle is not None:
            handle.cancelled = True

    def stop(self) -> None:
        """Ask the running loop to return after the current event."""
        self._stop = True

    @property
    def pending(self) -> int:
        return sum(1 for _, _, ev in self._heap if not ev.cancelled)

    def run_until(self, t: int) -> EngineStats:
        """Process every event with ``fire_at <= t`` and leave the clock at ``t``.

        If :meth:`stop` is called from inside an event, the loop returns early
        with the clock at that event's time.
        """
        if t < self.now:
            raise SchedulingError(f"run_until({t}) is before the clock ({self.now})")
        heap = self._heap
        pop = heapq.heappop
        observer = self.observer
        self._stop = False
        processed = 0
        while heap and heap[0][0] <= t:
            fire_at, _, ev = pop(heap)
            if ev.cancelled:
                continue
            self.now = fire_at
            processed += 1
            if observer is not None:
                observer(ev)
            ev.action(*ev.args)
            if self._stop:
                break
        else:
            self.now = t
        self.events_processed += processed
        return EngineStats(processed, self.now)


def _stream_entropy(global_seed: int, stream_id: str) -> list[int]:
    digest = hashlib.sha256(stream_id.encode("utf-8")).digest()
    words = [int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4)]
    seed = int(global_seed) & 0xFFFFFFFFFFFFFFFF
    return [seed & 0xFFFFFFFF, seed >> 32, *words]


class RngStream:
    """Independent random stream keyed by ``(global_seed, stream_id)``.

    Creating or drawing from other streams never perturbs this one.
    """

    def __init__(self, global_seed: int, stream_id: str):
        self.stream_id = stream_id
        self.global_seed = int(global_seed)
        seq = np.random.SeedSequence(_stream_entropy(global_seed, stream_id))
        self._gen = np.random.Generator(np.random.PCG64(seq))
        self.draws = 0

    def random(self, n: int | None = None):
        if n is None:
            self.draws += 1
            return self._gen.random()
        self.draws += n
        return self._gen.random(n)

    def bernoulli(self, p: float) -> bool:
        _check_prob(p)
        self.draws += 1
        return bool(self._gen.random() < p)

    def bernoulli_array(self, p: float, n: int) -> np.ndarray:
        """``n`` independent draws; identical to ``n`` calls of :meth:`bernoulli`."""
        _check_prob(p)
        self.draws += n
        return self._gen.random(n) < p


def _check_prob(p: float) -> None:
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"probability must lie in [0, 1], got {p!r}")


def bernoulli(stream: RngStream, p: float) -> bool:
    return stream.bernoulli(p)


class RngStreams:
    """Lazily created named streams sharing one global seed."""

    def __init__(self, global_seed: int):
        self.global_seed = int(global_seed)
        self._streams: dict[str, RngStream] = {}

    def __getitem__(self, stream_id: str) -> RngStream:
        stream = self._streams.get(stream_id)
        if stream is None:
            stream = self._streams[stream_id] = RngStream(self.global_seed, stream_id)
        return stream

    def __contains__(self, stream_id: str) -> bool:
        return stream_id in self._streams
