"""Reliable byte-stream transport.

The sender keeps a per-segment scoreboard in numpy arrays (state, latest
transmission serial, latest send time, retransmission flag). Data leaves in
segmentation-offload trains of up to ``burst_bytes``; the receiver answers
every train it receives with one cumulative ACK that carries selective
acknowledgement runs.

Loss inference follows the classic SACK rule applied to transmissions: a
transmission is lost once a new-data transmission sent at least ``dupthresh``
segments after it has been delivered. This also catches lost
retransmissions, so only losses with nothing sent after them (the tail) wait
for the retransmission timer.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .congestion import CcPolicy
from .engine import Engine, NS_PER_SEC, millis, seconds
from .net import FrameFormat, Frames, Port, serialization_ns

UNSENT, OUT, LOST, SACKED, ACKED = 0, 1, 2, 3, 4


@dataclass(frozen=True)
class TransportConfig:
    burst_bytes: int = 65536
    tx_queue_frames: int = 90
    ramp_window_bytes: int = 65535
    rwnd_bytes: int = 1 << 40
    rto_initial: int = seconds(1)
    rto_min: int = millis(200)
    rto_max: int = seconds(60)
    rto_granularity: int = millis(10)
    rto_style: str = "rfc"
    dupthresh: int = 3
    sack_history: int = 2

    def __post_init__(self) -> None:
        if self.rto_style not in ("rfc", "linux"):
            raise ValueError("rto_style must be 'rfc' or 'linux'")
        if self.burst_bytes < 1 or self.tx_queue_frames < 1:
            raise ValueError("burst_bytes and tx_queue_frames must be positive")
        if not 0 < self.rto_min <= self.rto_max or self.rto_initial <= 0:
            raise ValueError("RTO bounds must satisfy 0 < rto_min <= rto_max")
        if self.dupthresh < 1:
            raise ValueError("dupthresh must be at least 1")

    def burst_segments(self, mss: int) -> int:
        return max(1, self.burst_bytes // mss)


@dataclass(frozen=True)
class FlowSpec:
    flow_id: str
    src_host: str
    dst_host: str
    dst_port: int
    volume: int | None = None
    demand_rate: float | None = None
    reuse_connection: bool = True
    start_at: int | None = 0

    def __post_init__(self) -> None:
        if (self.volume is None) == (self.demand_rate is None):
            raise ValueError(f"flow {self.flow_id}: exactly one of volume / demand_rate must be set")
        if self.volume is not None and self.volume <= 0:
            raise ValueError(f"flow {self.flow_id}: volume must be positive")
        if self.demand_rate is not None and self.demand_rate <= 0:
            raise ValueError(f"flow {self.flow_id}: demand_rate must be positive")
        if self.start_at is not None and self.start_at < 0:
            raise ValueError(f"flow {self.flow_id}: start_at must be non-negative")

    @property
    def one_shot(self) -> bool:
        return self.volume is not None


@dataclass
class Ack:
    cum: int
    runs: tuple[tuple[int, int], ...]
    ts_echo: int


class _Growable:
    """Parallel numpy arrays indexed by absolute segment number minus ``base``."""

    def __init__(self, capacity: int, specs: dict[str, type]):
        self.base = 0
        self.capacity = capacity
        self._specs = specs
        for name, dtype in specs.items():
            setattr(self, name, np.zeros(capacity, dtype=dtype))

    def ensure(self, upto: int) -> None:
        need = upto - self.base
        if need <= self.capacity:
            return
        cap = self.capacity
        while cap < need:
            cap *= 2
        for name, dtype in self._specs.items():
            arr = np.zeros(cap, dtype=dtype)
            arr[: self.capacity] = getattr(self, name)
            setattr(self, name, arr)
        self.capacity = cap

    def compact(self, new_base: int) -> None:
        shift = new_base - self.base
        if shift <= 0:
            return
        for name in self._specs:
            arr = getattr(self, name)
            arr[: self.capacity - shift] = arr[shift:]
            arr[self.capacity - shift :] = 0
        self.base = new_base


@dataclass
class FlowStats:
    data_frames_sent: int = 0
    retransmits: int = 0
    loss_detections: int = 0
    rto_times: list[int] = field(default_factory=list)
    acks_received: int = 0
    dup_acks: int = 0


class Connection:
    """Sender half of a flow (the ConnectionState of the model)."""

    def __init__(
        self,
        engine: Engine,
        spec: FlowSpec,
        policy: CcPolicy,
        fmt: FrameFormat,
        config: TransportConfig,
        nic: Port,
        handshake_ns: int = 0,
    ):
        self.engine = engine
        self.spec = spec
        self.flow_id = spec.flow_id
        self.policy = policy
        self.fmt = fmt
        self.config = config
        self.nic = nic
        self.handshake_ns = handshake_ns
        self.mss = fmt.mss
        self.overhead = fmt.overhead
        self.burst = config.burst_segments(self.mss)
        if spec.volume is not None:
            self.n_segments = -(-spec.volume // self.mss)
            self.last_len = spec.volume - (self.n_segments - 1) * self.mss
            capacity = self.n_segments
        else:
            self.n_segments = None
            self.last_len = self.mss
            capacity = 1 << 16
        self.board = _Growable(capacity, {"state": np.uint8, "serial": np.int64, "txtime": np.int64, "retx": bool})
        self.snd_una = 0
        self.snd_nxt = 0
        self.n_out = 0
        self.n_lost = 0
        self.serial = 0
        self.h_new = -1
        self._records: deque[tuple[int, np.ndarray]] = deque()
        self._lost_q: deque[np.ndarray] = deque()
        self.srtt: int | None = None
        self.rttvar = 0
        self.backoff = 0
        self.timer_deadline: int | None = None
        self._timer_ev = None
        self._demand_ev = None
        self.in_recovery = False
        self.recovery_point = 0
        self.rwnd_effective = config.rwnd_bytes if spec.reuse_connection else config.ramp_window_bytes
        self.ws_ramp_done = spec.reuse_connection
        self.state = "idle"
        self.opened_at: int | None = None
        self.established_at: int | None = None
        self.completed_at: int | None = None
        self.stats = FlowStats()
        self.on_complete: list[Callable[["Connection"], None]] = []
        self.trace: Callable[..., None] | None = None

    # ----------------------------------------------------------- lifecycle

    def open(self) -> None:
        """Start the handshake (or reuse an established connection)."""
        if self.state != "idle":
            raise RuntimeError(f"flow {self.flow_id} already opened")
        now = self.engine.now
        self.opened_at = now
        if self.spec.reuse_connection or self.handshake_ns == 0:
            self._established()
        else:
            self.state = "handshake"
            self.engine.schedule(now + self.handshake_ns, self._established)

    def _established(self) -> None:
        self.state = "established"
        self.established_at = self.engine.now
        self.pump()

    @property
    def rto(self) -> int:
        if self.srtt is None:
            base = self.config.rto_initial
        else:
            cfg = self.config
            if cfg.rto_style == "rfc":
                base = max(self.srtt + max(cfg.rto_granularity, 4 * self.rttvar), cfg.rto_min)
            else:
                base = self.srtt + max(4 * self.rttvar, cfg.rto_min)
        return min(base << self.backoff, self.config.rto_max)

    @property
    def cwnd(self) -> int:
        return self.policy.window()

    @property
    def completion_time(self) -> int | None:
        """Final ACK time measured from the first data send opportunity."""
        if self.completed_at is None or self.established_at is None:
            return None
        return self.completed_at - self.established_at

    @property
    def done(self) -> bool:
        return self.state == "done"

    def bytes_in_flight(self) -> int:
        return self.n_out * self.mss

    def unacked_span_bytes(self) -> int:
        return (self.snd_nxt - self.snd_una) * self.mss

    # --------------------------------------------------------------- sending

    def _new_allowed(self, now: int) -> int:
        limit = self.snd_una + self.rwnd_effective // self.mss
        if self.n_segments is not None:
            limit = min(limit, self.n_segments)
        else:
            avail = int(self.spec.demand_rate * (now - self.established_at) / NS_PER_SEC) // self.mss
            if avail < limit:
                limit = avail
                if limit - self.snd_nxt < self.burst:
                    self._schedule_demand_wake()
        return limit - self.snd_nxt

    def _schedule_demand_wake(self) -> None:
        if self._demand_ev is not None:
            return
        target = (self.snd_nxt + self.burst) * self.mss
        at = self.established_at + math.ceil(target * NS_PER_SEC / self.spec.demand_rate)
        self._demand_ev = self.engine.schedule(max(at, self.engine.now), self._demand_wake)

    def _demand_wake(self) -> None:
        self._demand_ev = None
        self.pump()

    def pump(self) -> None:
        """Send opportunity: emit trains while window, NIC queue and data allow."""
        if self.state != "established":
            return
        now = self.engine.now
        nic = self.nic
        while True:
            room = nic.room()
            if room < self.burst:
                # whole trains only, like TCP small queues
                nic.wait_for_room(self.pump)
                return
            window = self.policy.window() - self.n_out
            if window <= 0:
                return
            k = min(self.burst, room, window)
            if self.n_lost:
                idx = self._take_lost(k)
                if idx is not None:
                    self._transmit(idx, True, now)
                    continue
            k = min(k, self._new_allowed(now))
            if k <= 0:
                return
            idx = np.arange(self.snd_nxt, self.snd_nxt + k, dtype=np.int64)
            self.snd_nxt += k
            self.board.ensure(self.snd_nxt)
            self._transmit(idx, False, now)

    def _transmit(self, idx: np.ndarray, retx: bool, now: int) -> None:
        k = len(idx)
        b = self.board
        rel = idx - b.base
        s0 = self.serial
        b.state[rel] = OUT
        b.serial[rel] = np.arange(s0, s0 + k, dtype=np.int64)
        b.txtime[rel] = now
        b.retx[rel] = retx
        self.serial += k
        self.n_out += k
        self._records.append((s0, idx))
        wire = np.full(k, self.mss + self.overhead, dtype=np.int64)
        if self.n_segments is not None and idx[-1] == self.n_segments - 1 or (retx and self.n_segments is not None):
            wire[idx == self.n_segments - 1] = self.last_len + self.overhead
        self.stats.data_frames_sent += k
        if retx:
            self.stats.retransmits += k
            if idx[0] == self.snd_una:
                self._arm(now + self.rto, force=True)
        if self.trace is not None:
            self.trace(now, self.flow_id, "retransmit" if retx else "send", idx)
        if self.timer_deadline is None:
            self._arm(now + self.rto)
        self.nic.enqueue(Frames(idx, wire, (self.flow_id, now, retx, not self.ws_ramp_done)))

    def _take_lost(self, k: int) -> np.ndarray | None:
        b = self.board
        taken = []
        need = k
        q = self._lost_q
        while need > 0 and q:
            chunk = q[0]
            chunk = chunk[chunk >= self.snd_una]
            if chunk.size:
                chunk = chunk[b.state[chunk - b.base] == LOST]
            if chunk.size == 0:
                q.popleft()
                continue
            if chunk.size > need:
                q[0] = chunk[need:]
                chunk = chunk[:need]
            else:
                q.popleft()
            taken.append(chunk)
            need -= chunk.size
        if not taken:
            self.n_lost = 0
            return None
        idx = taken[0] if len(taken) == 1 else np.concatenate(taken)
        b.state[idx - b.base] = UNSENT
        self.n_lost -= idx.size
        return idx

    # ------------------------------------------------------------ receiving

    def on_ack(self, ack: Ack) -> None:
        if self.state != "established":
            return
        now = self.engine.now
        st = self.stats
        st.acks_received += 1
        if not self.ws_ramp_done:
            self.ws_ramp_done = True
            self.rwnd_effective = self.config.rwnd_bytes
        cum = ack.cum
        if cum < self.snd_una:
            return
        b = self.board
        base = b.base
        progressed = cum > self.snd_una
        newly = 0
        if progressed:
            seg = b.state[self.snd_una - base : cum - base]
            n_out = int(np.count_nonzero(seg == OUT))
            n_lost = int(np.count_nonzero(seg == LOST))
            self.n_out -= n_out
            self.n_lost -= n_lost
            newly += len(seg) - int(np.count_nonzero(seg == SACKED))
            seg[:] = ACKED
            self.snd_una = cum
            recs = self._records
            while recs and recs[0][1][-1] < cum:
                recs.popleft()
        best = -1
        for lo, hi in ack.runs:
            if hi <= self.snd_una:
                continue
            if lo < self.snd_una:
                lo = self.snd_una
            seg = b.state[lo - base : hi - base]
            out = seg == OUT
            lost = seg == LOST
            live = out | lost
            n_live = int(np.count_nonzero(live))
            if not n_live:
                continue
            fresh = live & ~b.retx[lo - base : hi - base]
            if fresh.any():
                top = int(b.serial[lo - base : hi - base][fresh].max())
                if top > best:
                    best = top
            self.n_out -= int(np.count_nonzero(out))
            self.n_lost -= int(np.count_nonzero(lost))
            seg[live] = SACKED
            newly += n_live
        if progressed or newly:
            self._sample_rtt(now - ack.ts_echo)
        if best > self.h_new:
            self.h_new = best
            self._detect_losses()
        if progressed:
            self.backoff = 0
            if self.in_recovery and self.snd_una >= self.recovery_point:
                self.in_recovery = False
            if self.n_segments is not None and self.snd_una >= self.n_segments:
                self._complete(now)
                return
            if self.snd_una < self.snd_nxt:
                self._arm(self._head_deadline(now), force=True)
            else:
                self.timer_deadline = None
            if self.n_segments is None and self.snd_una - b.base > (b.capacity >> 1):
                self._compact()
        else:
            st.dup_acks += 1
        if newly:
            self.policy.on_ack(newly)
        if self.trace is not None:
            self.trace(now, self.flow_id, "ack", cum)
        self.pump()

    def _sample_rtt(self, r: int) -> None:
        if r < 0:
            return
        if self.srtt is None:
            self.srtt = r
            self.rttvar = r // 2
        else:
            self.rttvar = (3 * self.rttvar + abs(self.srtt - r)) // 4
            self.srtt = (7 * self.srtt + r) // 8

    def _detect_losses(self) -> None:
        limit = self.h_new - self.config.dupthresh
        recs = self._records
        b = self.board
        found = []
        while recs and recs[0][0] <= limit:
            s0, idx = recs[0]
            k = len(idx)
            m = min(k, limit - s0 + 1)
            part = idx[:m]
            valid = part >= self.snd_una
            if valid.any():
                cand = part[valid]
                rel = cand - b.base
                expect = s0 + np.flatnonzero(valid)
                hit = (b.state[rel] == OUT) & (b.serial[rel] == expect)
                if hit.any():
                    found.append(cand[hit])
            if m == k:
                recs.popleft()
            else:
                recs[0] = (s0 + m, idx[m:])
        if found:
            lost = found[0] if len(found) == 1 else np.concatenate(found)
            self._mark_lost(lost)
            self.stats.loss_detections += 1
            if not self.in_recovery:
                self.in_recovery = True
                self.recovery_point = self.snd_nxt
                self.policy.on_loss()

    def _mark_lost(self, idx: np.ndarray) -> None:
        b = self.board
        b.state[idx - b.base] = LOST
        self.n_out -= idx.size
        self.n_lost += idx.size
        self._lost_q.append(idx)
        if self.trace is not None:
            self.trace(self.engine.now, self.flow_id, "lost", idx)

    # ---------------------------------------------------------------- timer

    def _arm(self, deadline: int, force: bool = False) -> None:
        if self.timer_deadline is not None and not force and deadline >= self.timer_deadline:
            return
        self.timer_deadline = deadline
        ev = self._timer_ev
        if ev is None or ev.cancelled or ev.fire_at > deadline:
            if ev is not None:
                ev.cancel()
            self._timer_ev = self.engine.schedule(deadline, self._on_timer)

    def _head_deadline(self, now: int) -> int:
        # the timer belongs to the oldest outstanding transmission
        b = self.board
        rel = self.snd_una - b.base
        if b.state[rel] == OUT:
            return max(int(b.txtime[rel]) + self.rto, now)
        return now + self.rto

    def _on_timer(self) -> None:
        self._timer_ev = None
        deadline = self.timer_deadline
        if deadline is None or self.state != "established":
            return
        now = self.engine.now
        if deadline > now:
            self._timer_ev = self.engine.schedule(deadline, self._on_timer)
            return
        if self.snd_una >= self.snd_nxt:
            self.timer_deadline = None
            return
        self.on_rto()

    def on_rto(self) -> None:
        """Timer expiry: declare stale transmissions lost, back off, retransmit."""
        now = self.engine.now
        waited = self.rto
        self.stats.rto_times.append(now)
        self.backoff += 1
        self.policy.on_timeout()
        b = self.board
        lo, hi = self.snd_una - b.base, self.snd_nxt - b.base
        seg = b.state[lo:hi]
        stale = (seg == OUT) & (b.txtime[lo:hi] <= now - waited)
        if seg[0] == OUT:
            stale[0] = True
        stale_idx = np.flatnonzero(stale) + self.snd_una
        if stale_idx.size:
            b.state[stale_idx - b.base] = LOST
            self.n_out -= stale_idx.size
            self.n_lost += stale_idx.size
        pending = np.flatnonzero(seg == LOST) + self.snd_una
        if pending.size:
            self._lost_q.appendleft(pending)
        if self.trace is not None:
            self.trace(now, self.flow_id, "rto", self.snd_una)
        self.in_recovery = True
        self.recovery_point = self.snd_nxt
        self.timer_deadline = None
        self._arm(now + self.rto, force=True)
        self.pump()

    # ------------------------------------------------------------ teardown

    def _complete(self, now: int) -> None:
        self.state = "done"
        self.completed_at = now
        self.timer_deadline = None
        if self._timer_ev is not None:
            self._timer_ev.cancel()
            self._timer_ev = None
        for callback in self.on_complete:
            callback(self)

    def _compact(self) -> None:
        new_base = self.snd_una
        self._records = deque((s0, idx) for s0, idx in self._records if idx[-1] >= new_base)
        if self._records and self._records[0][1][0] < new_base:
            s0, idx = self._records[0]
            keep = idx >= new_base
            first = int(np.argmax(keep))
            self._records[0] = (s0 + first, idx[first:])
        self._lost_q = deque(c[c >= new_base] for c in self._lost_q)
        self.board.compact(new_base)


class Receiver:
    """Receiving half: reassembly, goodput accounting and ACK generation."""

    def __init__(
        self,
        engine: Engine,
        flow_id: str,
        fmt: FrameFormat,
        bin_width: int,
        send_ack: Callable[[Ack], None],
        n_segments: int | None = None,
        last_len: int | None = None,
        sack_history: int = 2,
        rate_bps: float = 1e9,
    ):
        self.engine = engine
        self.flow_id = flow_id
        self.mss = fmt.mss
        self.overhead = fmt.overhead
        self.bin_width = bin_width
        self.send_ack = send_ack
        self.n_segments = n_segments
        self.last_len = last_len if last_len is not None else fmt.mss
        self.rate_bps = rate_bps
        self.rcv_nxt = 0
        self.top = 0
        self._rcvd = _Growable(n_segments or (1 << 16), {"got": bool})
        self._recent: deque[tuple[int, int]] = deque(maxlen=max(sack_history, 0) or None)
        self._history = sack_history
        self._bins = np.zeros(64, dtype=np.int64)
        self.bytes_delivered = 0
        self.frames_received = 0
        self.duplicates = 0
        self.box_start: int | None = None
        self.box_end: int | None = None
        self.first_arrival: int | None = None
        self.last_arrival: int | None = None

    def _payload(self, idx: np.ndarray) -> int:
        total = idx.size * self.mss
        if self.n_segments is not None and idx[-1] >= self.n_segments - 1:
            total -= int(np.count_nonzero(idx == self.n_segments - 1)) * (self.mss - self.last_len)
        return total

    def _bin(self, arrivals: np.ndarray, payload: np.ndarray | int, nbytes: int) -> None:
        bw = self.bin_width
        first = int(arrivals[0]) // bw
        last = int(arrivals[-1]) // bw
        if last >= self._bins.size:
            size = self._bins.size
            while size <= last:
                size *= 2
            grown = np.zeros(size, dtype=np.int64)
            grown[: self._bins.size] = self._bins
            self._bins = grown
        if first == last:
            self._bins[first] += nbytes
        else:
            weights = payload if isinstance(payload, np.ndarray) else np.full(arrivals.size, payload)
            counts = np.bincount(arrivals // bw - first, weights=weights)
            self._bins[first : first + counts.size] += counts.astype(np.int64)

    def on_frames(self, frames: Frames, arrivals: np.ndarray) -> None:
        idx = frames.idx
        _, sent_at, retx, ramp = frames.tag
        k = idx.size
        self.frames_received += k
        runs: tuple[tuple[int, int], ...] = ()
        if self.top <= self.rcv_nxt and idx[0] == self.rcv_nxt and idx[-1] - idx[0] == k - 1:
            fresh_idx = idx
            fresh_arr = arrivals
            self.rcv_nxt += k
            self.top = self.rcv_nxt
        else:
            store = self._rcvd
            store.ensure(int(idx.max()) + 1)
            fresh = idx >= self.rcv_nxt
            fresh[fresh] = ~store.got[idx[fresh] - store.base]
            fresh_idx = idx[fresh]
            fresh_arr = arrivals[fresh]
            self.duplicates += k - fresh_idx.size
            if fresh_idx.size:
                store.got[fresh_idx - store.base] = True
                self.top = max(self.top, int(fresh_idx.max()) + 1)
                if store.got[self.rcv_nxt - store.base]:
                    window = store.got[self.rcv_nxt - store.base : self.top - store.base]
                    gap = int(np.argmin(window))
                    self.rcv_nxt += window.size if window[gap] else gap
            above = np.sort(idx[idx >= self.rcv_nxt])
            if above.size:
                cuts = np.flatnonzero(np.diff(above) != 1) + 1
                starts = np.concatenate(([0], cuts))
                ends = np.concatenate((cuts, [above.size]))
                runs = tuple((int(above[s]), int(above[e - 1]) + 1) for s, e in zip(starts, ends))
            if self.n_segments is None and self.rcv_nxt - store.base > (store.capacity >> 1):
                store.compact(self.rcv_nxt)
        if fresh_idx.size:
            nbytes = self._payload(fresh_idx)
            self.bytes_delivered += nbytes
            if self.n_segments is not None and fresh_idx[-1] >= self.n_segments - 1 and fresh_idx.size > 1:
                payload = np.full(fresh_idx.size, self.mss, dtype=np.int64)
                payload[fresh_idx == self.n_segments - 1] = self.last_len
            else:
                payload = self.mss
            self._bin(fresh_arr, payload, nbytes)
            if self.first_arrival is None:
                self.first_arrival = int(fresh_arr[0])
            self.last_arrival = int(fresh_arr[-1])
            if not retx:
                if not ramp and self.box_start is None:
                    wire = int(frames.wire[0]) if frames.wire.size else self.mss + self.overhead
                    self.box_start = int(fresh_arr[0]) - serialization_ns(wire, self.rate_bps)
                if not ramp:
                    self.box_end = int(fresh_arr[-1])
        report = runs
        if self._history and self._recent:
            report = runs + tuple(self._recent)
        for run in runs[-self._history :] if self._history else ():
            self._recent.appendleft(run)
        self.send_ack(Ack(self.rcv_nxt, report, sent_at))

    @property
    def complete(self) -> bool:
        return self.n_segments is not None and self.rcv_nxt >= self.n_segments

    def series(self, until: int | None = None) -> np.ndarray:
        """First-delivery payload bytes per bin from time zero."""
        n = self._bins.size if until is None else -(-until // self.bin_width)
        out = np.zeros(n, dtype=np.int64)
        m = min(n, self._bins.size)
        out[:m] = self._bins[:m]
        return out

    @property
    def box_width(self) -> int | None:
        if self.box_start is None or self.box_end is None:
            return None
        return self.box_end - self.box_start


def goodput_series(receiver: Receiver, bin_width: int, until: int | None = None) -> np.ndarray:
    """Goodput in bytes/second per bin. ``bin_width`` must be a whole multiple
    of the receiver's native bin width."""
    if bin_width % receiver.bin_width:
        raise ValueError("bin_width must be a multiple of the receiver's bin width")
    factor = bin_width // receiver.bin_width
    raw = receiver.series(until)
    pad = (-raw.size) % factor
    if pad:
        raw = np.concatenate((raw, np.zeros(pad, dtype=np.int64)))
    grouped = raw.reshape(-1, factor).sum(axis=1)
    return grouped * (NS_PER_SEC / bin_width)
