"""Frames, impaired point-to-point channels, host NIC ports and a shared-buffer
switch with PAUSE flow control.

Frames move through the network in *trains*: a :class:`Frames` batch holds
one or more wire frames that were handed to a serializer back to back (one
segmentation-offload burst). Every frame keeps its own wire size, its own
serialization slot and its own loss draw; batching only reduces the number of
engine events.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from .engine import NS_PER_SEC, Engine, RngStream, millis


@dataclass(frozen=True)
class FrameFormat:
    mtu: int = 1500
    transport_header: int = 52
    link_overhead: int = 38

    def __post_init__(self) -> None:
        if self.mtu <= self.transport_header:
            raise ValueError(f"mtu {self.mtu} leaves no room for the {self.transport_header}-byte header")
        if self.transport_header < 0 or self.link_overhead < 0:
            raise ValueError("header sizes must be non-negative")

    @property
    def mss(self) -> int:
        return self.mtu - self.transport_header

    @property
    def overhead(self) -> int:
        """Bytes added to every segment on the wire."""
        return self.transport_header + self.link_overhead

    @property
    def full_wire(self) -> int:
        return self.mtu + self.link_overhead

    @property
    def payload_fraction(self) -> float:
        return self.mss / self.full_wire

    def payload_rate(self, rate_bps: float) -> float:
        """Best-case payload bytes per second on a link of ``rate_bps``."""
        return rate_bps / 8.0 * self.payload_fraction


def wire_size(payload_bytes: int, fmt: FrameFormat = FrameFormat()) -> int:
    if payload_bytes < 0 or payload_bytes > fmt.mss:
        raise ValueError(f"payload of {payload_bytes} bytes outside [0, {fmt.mss}]")
    return payload_bytes + fmt.overhead


def serialization_ns(wire_bytes: int, rate_bps: float) -> int:
    """Time to clock ``wire_bytes`` onto a link, rounded up to whole ns."""
    if math.isinf(rate_bps):
        return 0
    return -(-int(wire_bytes) * 8 * NS_PER_SEC // int(rate_bps))


def serialization_array(wire: np.ndarray, rate_bps: float) -> np.ndarray:
    if math.isinf(rate_bps):
        return np.zeros(len(wire), dtype=np.int64)
    return -((-wire * (8 * NS_PER_SEC)) // int(rate_bps))


@dataclass(frozen=True)
class LinkConfig:
    rate_bps: int = 1_000_000_000
    prop_delay: int = millis(90)
    loss_prob: float = 0.0001
    queue_limit: int = 50_000

    def __post_init__(self) -> None:
        if self.rate_bps <= 0:
            raise ValueError("rate_bps must be positive")
        if self.prop_delay < 0:
            raise ValueError("prop_delay must be non-negative")
        if not 0.0 <= self.loss_prob <= 1.0:
            raise ValueError("loss_prob must lie in [0, 1]")
        if self.queue_limit < 1:
            raise ValueError("queue_limit must be at least 1")


@dataclass(frozen=True)
class SwitchConfig:
    buffer_bytes: int
    pause_enabled: bool = True
    pause_high_watermark: int | None = None
    pause_low_watermark: int | None = None
    port_rates: dict[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.buffer_bytes <= 0:
            raise ValueError("buffer_bytes must be positive")
        for name in ("pause_high_watermark", "pause_low_watermark"):
            value = getattr(self, name)
            if value is not None and not 0 <= value <= self.buffer_bytes:
                raise ValueError(f"{name} must lie within the buffer")


def min_buffer_required(
    n_senders: int,
    total_window_pkts: int,
    frame_wire_bytes: int,
    per_sender_rate: float,
    egress_rate: float,
) -> float:
    """Peak backlog when ``n_senders`` release a shared window simultaneously.

    The window drains while it arrives, so only the fraction of ingress in
    excess of egress accumulates. Pass ``math.inf`` as the per-sender rate for
    the instantaneous-arrival bound.
    """
    if n_senders < 1:
        raise ValueError("n_senders must be at least 1")
    if per_sender_rate <= 0 or egress_rate <= 0:
        raise ValueError("rates must be positive")
    ingress = n_senders * per_sender_rate
    if ingress <= egress_rate:
        return 0.0
    return total_window_pkts * frame_wire_bytes * (1.0 - egress_rate / ingress)


class Frames:
    """A train of wire frames.

    ``idx`` labels each frame (the transport stores segment numbers there),
    ``wire`` holds per-frame wire sizes and ``tag`` is shared opaque metadata.
    """

    __slots__ = ("idx", "wire", "tag")

    def __init__(self, idx: np.ndarray, wire: np.ndarray, tag: Any = None):
        self.idx = idx
        self.wire = wire
        self.tag = tag

    def __len__(self) -> int:
        return len(self.wire)

    def subset(self, mask_or_slice) -> "Frames":
        return Frames(self.idx[mask_or_slice], self.wire[mask_or_slice], self.tag)


TrainSink = Callable[[Frames, np.ndarray], None]
FrameSink = Callable[[Any, int], None]


def deliver_to(engine: Engine, handler: Callable[[Frames, np.ndarray], None]) -> TrainSink:
    """Sink that hands a train to ``handler`` when its last frame has arrived."""

    def sink(frames: Frames, arrivals: np.ndarray) -> None:
        engine.schedule(int(arrivals[-1]), handler, frames, arrivals)

    return sink


def deliver_one_to(engine: Engine, handler: Callable[[Any], None]) -> FrameSink:
    def sink(payload: Any, arrival: int) -> None:
        engine.schedule(arrival, handler, payload)

    return sink


def _drain_times(ser: np.ndarray, ready, busy_until: int) -> np.ndarray:
    """FIFO departure times for frames ready at ``ready`` behind ``busy_until``."""
    cum = np.cumsum(ser)
    if np.isscalar(ready):
        return max(int(ready), busy_until) + cum
    base = ready - (cum - ser)
    if base[0] < busy_until:
        base = base.copy()
        base[0] = busy_until
    return cum + np.maximum.accumulate(base)


class Channel:
    """One direction of an impaired link: FIFO tail-drop queue, serializer,
    per-frame Bernoulli loss, then constant propagation delay.

    Hops are chained synchronously: a channel computes every frame's arrival
    time at the next hop and passes the train on immediately. Only endpoint
    sinks schedule engine events.
    """

    def __init__(self, engine: Engine, name: str, config: LinkConfig, stream: RngStream | None = None):
        self.engine = engine
        self.name = name
        self.config = config
        self.rate = config.rate_bps
        self.prop = config.prop_delay
        self.loss = config.loss_prob
        self.limit = config.queue_limit
        self.stream = stream
        if self.loss > 0 and stream is None:
            raise ValueError(f"channel {name} needs a random stream for loss")
        self.busy_until = 0
        self._backlog: deque[list[int]] = deque()
        self._queued = 0
        self.sent = 0
        self.lost = 0
        self.tail_dropped = 0
        self.sink: TrainSink | None = None
        self.sink_one: FrameSink | None = None
        self.on_drop: Callable[[Frames, np.ndarray], None] | None = None
        self._ser_cache: dict[int, int] = {}

    @property
    def delivered(self) -> int:
        return self.sent - self.lost

    @property
    def dropped(self) -> int:
        return self.lost + self.tail_dropped

    @property
    def offered(self) -> int:
        return self.sent + self.tail_dropped

    def latency(self, wire_bytes: int) -> int:
        """Unloaded one-way latency for one frame."""
        return serialization_ns(wire_bytes, self.rate) + self.prop

    def _retire(self, t: int) -> None:
        backlog = self._backlog
        while backlog and backlog[0][0] <= t:
            self._queued -= backlog.popleft()[1]

    def queued_at(self, t: int) -> int:
        self._retire(t)
        return self._queued

    def forward(self, frames: Frames, ready) -> None:
        """Queue a train whose frames reach this channel at ``ready``
        (one time for all, or one per frame, non-decreasing)."""
        t0 = int(ready) if np.isscalar(ready) else int(ready[0])
        self._retire(t0)
        k = len(frames)
        room = self.limit - self._queued
        if k > room:
            keep = max(room, 0)
            self.tail_dropped += k - keep
            if self.on_drop is not None:
                self.on_drop(frames.subset(slice(keep, None)), np.full(k - keep, t0, dtype=np.int64))
            if keep == 0:
                return
            frames = frames.subset(slice(0, keep))
            if not np.isscalar(ready):
                ready = ready[:keep]
            k = keep
        ends = _drain_times(serialization_array(frames.wire, self.rate), ready, self.busy_until)
        self.busy_until = int(ends[-1])
        self._backlog.append([self.busy_until, k])
        self._queued += k
        self.sent += k
        if self.loss > 0.0:
            lost = self.stream.bernoulli_array(self.loss, k)
            n_lost = int(np.count_nonzero(lost))
            if n_lost:
                self.lost += n_lost
                if self.on_drop is not None:
                    self.on_drop(frames.subset(lost), ends[lost])
                if n_lost == k:
                    return
                keep = ~lost
                frames = frames.subset(keep)
                ends = ends[keep]
        self.sink(frames, ends + self.prop)

    def forward_one(self, payload: Any, wire: int, ready: int) -> None:
        """Scalar fast path for a single frame (pure ACKs)."""
        self._retire(ready)
        if self._queued >= self.limit:
            self.tail_dropped += 1
            return
        ser = self._ser_cache.get(wire)
        if ser is None:
            ser = self._ser_cache[wire] = serialization_ns(wire, self.rate)
        end = max(ready, self.busy_until) + ser
        self.busy_until = end
        self._backlog.append([end, 1])
        self._queued += 1
        self.sent += 1
        if self.loss > 0.0 and self.stream.bernoulli(self.loss):
            self.lost += 1
            return
        self.sink_one(payload, end + self.prop)


class Port:
    """Event-driven transmit port of a host NIC.

    Holds up to ``queue_limit`` frames; transmits one train at a time and can
    be halted between trains by a PAUSE-capable switch (``gate``).
    """

    def __init__(self, engine: Engine, name: str, rate_bps: float, queue_limit: int, delay: int = 0):
        self.engine = engine
        self.name = name
        self.rate = rate_bps
        self.limit = queue_limit
        self.delay = delay
        self.sink: TrainSink | None = None
        self.gate: "Switch | None" = None
        self._queue: deque[Frames] = deque()
        self.queued = 0
        self.busy = False
        self._waiters: list[Callable[[], None]] = []
        self.sent = 0
        self.max_burst_bytes = 0

    def room(self) -> int:
        return self.limit - self.queued

    def wait_for_room(self, callback: Callable[[], None]) -> None:
        if callback not in self._waiters:
            self._waiters.append(callback)

    def enqueue(self, frames: Frames, start: bool = True) -> None:
        self._queue.append(frames)
        self.queued += len(frames)
        if start and not self.busy:
            self._start()

    def resume(self) -> None:
        if not self.busy:
            self._start()

    def _start(self) -> None:
        if not self._queue or (self.gate is not None and self.gate.paused):
            self.busy = False
            return
        frames = self._queue.popleft()
        self.queued -= len(frames)
        now = self.engine.now
        ends = now + np.cumsum(serialization_array(frames.wire, self.rate))
        self.busy = True
        self.sent += len(frames)
        self.engine.schedule(int(ends[-1]), self._done)
        self.sink(frames, ends + self.delay if self.delay else ends)
        if self._waiters:
            waiters, self._waiters = self._waiters, []
            for callback in waiters:
                callback()

    def _done(self) -> None:
        self.busy = False
        self._start()


class Switch:
    """Output-queued switch: one shared FIFO buffer in front of the egress link.

    Occupancy is the egress backlog in bytes. With PAUSE enabled, crossing the
    high watermark halts every attached ingress port after its current train;
    ports resume once the backlog falls to the low watermark.
    """

    def __init__(self, engine: Engine, config: SwitchConfig, egress_rate_bps: float, name: str = "switch"):
        self.engine = engine
        self.config = config
        self.name = name
        self.egress_rate = egress_rate_bps
        self.buffer = config.buffer_bytes
        self.pause_enabled = config.pause_enabled
        self._high = config.pause_high_watermark
        self._low = config.pause_low_watermark
        self.ports: list[Port] = []
        self.sink: TrainSink | None = None
        self.busy_until = 0
        self.paused = False
        self.pause_events = 0
        self.peak_bytes = 0.0
        self.drops = 0
        self.received = 0
        self._resume_ev = None

    def attach(self, port: Port, max_burst_bytes: int) -> None:
        port.gate = self if self.pause_enabled else None
        port.max_burst_bytes = max_burst_bytes
        port.sink = self.receive
        self.ports.append(port)

    @property
    def high_watermark(self) -> float:
        if self._high is not None:
            return self._high
        slack = sum(p.max_burst_bytes for p in self.ports)
        return max(self.buffer - slack, 0)

    @property
    def low_watermark(self) -> float:
        return self._low if self._low is not None else self.buffer / 2

    def _bytes(self, ns: float) -> float:
        return ns * self.egress_rate / (8 * NS_PER_SEC)

    def _ns(self, nbytes: float) -> int:
        return int(nbytes * 8 * NS_PER_SEC / self.egress_rate)

    def occupancy(self, t: int) -> float:
        return self._bytes(max(0, self.busy_until - t))

    def receive(self, frames: Frames, arrivals: np.ndarray) -> None:
        ser = serialization_array(frames.wire, self.egress_rate)
        ends = _drain_times(ser, arrivals, self.busy_until)
        backlog = self._bytes(ends - arrivals)
        if backlog[-1] > self.buffer or backlog.max() > self.buffer:
            frames, arrivals, ends = self._admit(frames, arrivals, ser)
            if frames is None:
                return
        self.received += len(frames)
        self.busy_until = int(ends[-1])
        occ = self.occupancy(int(arrivals[-1]))
        if occ > self.peak_bytes:
            self.peak_bytes = occ
        if self.pause_enabled and not self.paused and occ > self.high_watermark:
            self.paused = True
            self.pause_events += 1
            self._schedule_resume()
        if self.sink is not None:
            self.sink(frames, ends)

    def _admit(self, frames: Frames, arrivals: np.ndarray, ser: np.ndarray):
        keep = np.zeros(len(frames), dtype=bool)
        busy = self.busy_until
        ends = np.empty(len(frames), dtype=np.int64)
        for j in range(len(frames)):
            a = int(arrivals[j])
            end = max(a, busy) + int(ser[j])
            if self._bytes(end - a) <= self.buffer:
                keep[j] = True
                busy = end
                ends[j] = end
        self.drops += int(len(frames) - keep.sum())
        if not keep.any():
            return None, None, None
        return frames.subset(keep), arrivals[keep], ends[keep]

    def _schedule_resume(self) -> None:
        target = self.busy_until - self._ns(self.low_watermark)
        self._resume_ev = self.engine.schedule(max(target, self.engine.now), self._check_resume)

    def _check_resume(self) -> None:
        self._resume_ev = None
        if self.occupancy(self.engine.now) <= self.low_watermark:
            self.paused = False
            for port in self.ports:
                port.resume()
        else:
            self._schedule_resume()
