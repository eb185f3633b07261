"""Builds a simulation from a :class:`ScenarioConfig`, runs it, and drives
sweeps, the optimum-window search and the switch burst study."""

from __future__ import annotations

import dataclasses
import logging
import math
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .congestion import FixedWindow, PolicyTable
from .controller import ActionRecord, Controller
from .engine import NS_PER_SEC, Engine, RngStreams, millis, seconds, to_seconds
from .errors import ConfigError
from .net import Channel, Frames, LinkConfig, Port, Switch, SwitchConfig, min_buffer_required, serialization_ns
from .scenario import BurstCase, ScenarioConfig
from .transport import Connection, Receiver, goodput_series

log = logging.getLogger(__name__)


@dataclass
class FlowResult:
    flow_id: str
    volume: int | None
    reuse: bool
    opened_at: int | None
    established_at: int | None
    completed_at: int | None
    bytes_delivered: int
    data_frames_sent: int
    data_frames_dropped: int
    retransmits: int
    loss_detections: int
    rto_times: list[int]
    box_start: int | None
    box_end: int | None
    cwnd_history: list[tuple[int, float]]

    @property
    def completion_time(self) -> float | None:
        """Seconds from the first data send opportunity to the final ACK."""
        if self.completed_at is None or self.established_at is None:
            return None
        return to_seconds(self.completed_at - self.established_at)

    @property
    def box_width(self) -> float | None:
        if self.box_start is None or self.box_end is None:
            return None
        return to_seconds(self.box_end - self.box_start)


@dataclass
class LinkResult:
    name: str
    sent: int
    lost: int
    tail_dropped: int

    @property
    def dropped(self) -> int:
        return self.lost + self.tail_dropped


@dataclass
class RunResult:
    scenario: str
    seed: int
    end_time: int
    bin_width: int
    flows: dict[str, FlowResult]
    series: dict[str, np.ndarray]
    links: dict[str, LinkResult]
    switch_peak_bytes: float
    switch_drops: int
    pause_events: int
    action_log: list[ActionRecord]
    starts: list[tuple[int, str]]
    events_processed: int
    sum_violations: list[tuple[int, int]] = field(default_factory=list)
    trace: list[tuple] | None = None

    def goodput(self, flow: str, bin_width: int | None = None) -> np.ndarray:
        """Bytes/second per bin for ``flow``."""
        raw = self.series[flow]
        bw = bin_width or self.bin_width
        factor = bw // self.bin_width
        pad = (-raw.size) % factor
        if pad:
            raw = np.concatenate((raw, np.zeros(pad, dtype=np.int64)))
        return raw.reshape(-1, factor).sum(axis=1) * (NS_PER_SEC / bw)

    def aggregate(self) -> np.ndarray:
        total = None
        for s in self.series.values():
            total = s.copy() if total is None else total + s
        if total is None:
            return np.zeros(0)
        return total * (NS_PER_SEC / self.bin_width)

    def mean_goodput(self, flow: str | None, start_s: float, end_s: float) -> float:
        """Average goodput over whole bins inside [start_s, end_s)."""
        series = self.aggregate() if flow is None else self.goodput(flow)
        lo = math.ceil(seconds(start_s) / self.bin_width)
        hi = min(seconds(end_s) // self.bin_width, series.size)
        if hi <= lo:
            return 0.0
        return float(series[lo:hi].mean())


class Simulation:
    """One wired-up run. Kept as an object so tests can poke at internals."""

    ACK_PAYLOAD = 0

    def __init__(self, cfg: ScenarioConfig, trace: bool = False):
        self.cfg = cfg
        self.engine = Engine()
        self.streams = RngStreams(cfg.seed)
        self.fmt = cfg.frame
        self.ack_wire = self.fmt.overhead
        self.trace_rows: list[tuple] | None = [] if trace else None
        self.table = PolicyTable(cfg.routes)
        self.channels: dict[str, Channel] = {}
        self.ports: dict[str, Port] = {}
        self.switch: Switch | None = None
        self.conns: dict[str, Connection] = {}
        self.receivers: dict[str, Receiver] = {}
        self.flow_drops: dict[str, int] = {f.flow_id: 0 for f in cfg.flows}
        self._pending_one_shot = {f.flow_id for f in cfg.flows if f.one_shot}
        self._continuous = any(not f.one_shot for f in cfg.flows)
        self._build_network()
        self._build_flows()
        self.controller = Controller(
            self.engine,
            self.table,
            cfg.total_cwnd or 0,
            self.conns,
            self._start_flow,
            is_active=lambda fid: fid in self.conns and self.conns[fid].state in ("handshake", "established"),
        )

    # --------------------------------------------------------- topology

    def _channel(self, name: str, link: LinkConfig) -> Channel:
        stream = self.streams[name] if link.loss_prob > 0 else None
        ch = Channel(self.engine, name, link, stream)
        ch.on_drop = self._on_drop
        self.channels[name] = ch
        return ch

    def _on_drop(self, frames: Frames, times: np.ndarray) -> None:
        if frames.idx is None:
            return
        fid = frames.tag[0]
        self.flow_drops[fid] = self.flow_drops.get(fid, 0) + len(frames)
        if self.trace_rows is not None:
            for seg, t in zip(frames.idx.tolist(), times.tolist()):
                self.trace_rows.append((int(t), fid, "drop", seg))

    def _build_network(self) -> None:
        cfg = self.cfg
        senders = sorted({f.src_host for f in cfg.flows}, key=[h.name for h in cfg.hosts].index)
        qlimit = cfg.transport.tx_queue_frames
        max_train = cfg.transport.burst_segments(self.fmt.mss) * self.fmt.full_wire
        deliver_data = self._deliver_data
        deliver_ack = self._deliver_ack
        self._fwd_hops: list[tuple[float, int]] = []
        self._rev_hops: list[tuple[float, int]] = []
        if cfg.switch is not None:
            wan = self._channel("wan:fwd", cfg.wan)
            wan.sink = deliver_data
            rev = self._channel("wan:rev", cfg.reverse)
            self.switch = Switch(self.engine, cfg.switch, cfg.wan.rate_bps)
            self.switch.sink = wan.forward
            self._uplink = {}
            for host in senders:
                port = Port(self.engine, f"nic:{host}", cfg.access.rate_bps, qlimit, cfg.access.prop_delay)
                self.switch.attach(port, max_train)
                self.ports[host] = port
                down = self._channel(f"access:{host}:down", dataclasses.replace(cfg.access, loss_prob=0.0))
                down.sink_one = deliver_ack
                self._uplink[host] = down
            rev.sink_one = self._to_host
            self._fwd_hops = [(cfg.access.rate_bps, cfg.access.prop_delay), (cfg.wan.rate_bps, 0), (cfg.wan.rate_bps, cfg.wan.prop_delay)]
            self._rev_hops = [(cfg.reverse.rate_bps, cfg.reverse.prop_delay), (cfg.access.rate_bps, cfg.access.prop_delay)]
            self._rev_for = {host: rev for host in senders}
        else:
            self._rev_for = {}
            for host in senders:
                port = Port(self.engine, f"nic:{host}", cfg.access.rate_bps, qlimit, cfg.access.prop_delay)
                wan = self._channel(f"wan:{host}:fwd", cfg.wan)
                wan.sink = deliver_data
                port.sink = wan.forward
                self.ports[host] = port
                rev = self._channel(f"wan:{host}:rev", cfg.reverse)
                rev.sink_one = deliver_ack
                self._rev_for[host] = rev
            self._fwd_hops = [(cfg.access.rate_bps, cfg.access.prop_delay), (cfg.wan.rate_bps, cfg.wan.prop_delay)]
            self._rev_hops = [(cfg.reverse.rate_bps, cfg.reverse.prop_delay)]

    def _to_host(self, payload, arrival: int) -> None:
        self._uplink[payload[2]].forward_one(payload, self.ack_wire, arrival)

    def _deliver_data(self, frames: Frames, arrivals: np.ndarray) -> None:
        receiver = self.receivers[frames.tag[0]]
        self.engine.schedule(int(arrivals[-1]), receiver.on_frames, frames, arrivals)

    def _deliver_ack(self, payload, arrival: int) -> None:
        self.engine.schedule(arrival, payload[0], payload[1])

    def handshake_ns(self) -> int:
        """Unloaded round trip of a header-only frame (SYN out, SYN-ACK back)."""
        total = 0
        for rate, delay in self._fwd_hops + self._rev_hops:
            total += serialization_ns(self.ack_wire, rate) + delay
        return total

    def _build_flows(self) -> None:
        cfg = self.cfg
        hs = self.handshake_ns()
        for spec in cfg.flows:
            dst = cfg.host(spec.dst_host)
            policy = self.table.bind(spec.flow_id, spec.src_host, dst.addr, spec.dst_port)
            conn = Connection(self.engine, spec, policy, self.fmt, cfg.transport, self.ports[spec.src_host], hs)
            rev = self._rev_for[spec.src_host]
            envelope_host = spec.src_host
            on_ack = conn.on_ack
            engine = self.engine
            ack_wire = self.ack_wire

            def send_ack(ack, rev=rev, on_ack=on_ack, host=envelope_host):
                rev.forward_one((on_ack, ack, host), ack_wire, engine.now)

            receiver = Receiver(
                self.engine, spec.flow_id, self.fmt, cfg.bin_width, send_ack,
                conn.n_segments, conn.last_len, cfg.transport.sack_history, cfg.wan.rate_bps,
            )
            conn.on_complete.append(self._flow_done)
            if self.trace_rows is not None:
                conn.trace = self._trace
            self.conns[spec.flow_id] = conn
            self.receivers[spec.flow_id] = receiver

    def _trace(self, t: int, fid: str, kind: str, what) -> None:
        rows = self.trace_rows
        if isinstance(what, np.ndarray):
            for seg in what.tolist():
                rows.append((t, fid, kind, seg))
        else:
            rows.append((t, fid, kind, int(what)))

    # --------------------------------------------------------------- run

    def _start_flow(self, flow_id: str) -> None:
        conn = self.conns[flow_id]
        if conn.state == "idle":
            conn.open()

    def _flow_done(self, conn: Connection) -> None:
        self._pending_one_shot.discard(conn.flow_id)
        if self.cfg.stop_when_done and not self._pending_one_shot and not self._continuous:
            self.engine.stop()

    def run(self) -> RunResult:
        cfg = self.cfg
        self.controller.execute_plan(list(cfg.plan))
        for spec in cfg.flows:
            if spec.start_at is not None:
                self.engine.schedule(spec.start_at, self._start_flow, spec.flow_id)
        stats = self.engine.run_until(cfg.duration)
        return self._result(stats.clock)

    def _result(self, end: int) -> RunResult:
        cfg = self.cfg
        flows = {}
        series = {}
        for fid, conn in self.conns.items():
            rcv = self.receivers[fid]
            policy = conn.policy
            if isinstance(policy, FixedWindow):
                history = [(t, float(v)) for t, v in policy.history]
            else:
                history = [(-1, float(v)) for v in getattr(policy, "history", [])]
            flows[fid] = FlowResult(
                flow_id=fid,
                volume=conn.spec.volume,
                reuse=conn.spec.reuse_connection,
                opened_at=conn.opened_at,
                established_at=conn.established_at,
                completed_at=conn.completed_at,
                bytes_delivered=rcv.bytes_delivered,
                data_frames_sent=conn.stats.data_frames_sent,
                data_frames_dropped=self.flow_drops.get(fid, 0),
                retransmits=conn.stats.retransmits,
                loss_detections=conn.stats.loss_detections,
                rto_times=list(conn.stats.rto_times),
                box_start=rcv.box_start,
                box_end=rcv.box_end,
                cwnd_history=history,
            )
            series[fid] = rcv.series(end if end > 0 else 0)
        links = {name: LinkResult(name, ch.sent, ch.lost, ch.tail_dropped) for name, ch in self.channels.items()}
        sw = self.switch
        return RunResult(
            scenario=cfg.name,
            seed=cfg.seed,
            end_time=end,
            bin_width=cfg.bin_width,
            flows=flows,
            series=series,
            links=links,
            switch_peak_bytes=sw.peak_bytes if sw else 0.0,
            switch_drops=sw.drops if sw else 0,
            pause_events=sw.pause_events if sw else 0,
            action_log=list(self.controller.log),
            starts=list(self.controller.starts),
            events_processed=self.engine.events_processed,
            sum_violations=list(self.controller.sum_violations),
            trace=self.trace_rows,
        )


def run_scenario(cfg: ScenarioConfig, trace: bool = False) -> RunResult:
    if cfg.burst is not None and not cfg.flows:
        raise ConfigError(f"{cfg.name}: burst studies run through run_burst_study")
    return Simulation(cfg, trace=trace).run()


def box_width(result: RunResult, flow: str) -> float:
    """Seconds between the first and last first-delivery of original data
    (ramp segments and retransmissions excluded)."""
    fr = result.flows[flow]
    if fr.bytes_delivered == 0 or fr.box_width is None:
        raise ValueError(f"flow {flow!r} delivered no post-ramp data; box width undefined")
    return fr.box_width


# ------------------------------------------------------------------ sweep


def derive_seed(base_seed: int, row: int, col: int, rep: int) -> int:
    state = np.random.SeedSequence(int(base_seed), spawn_key=(row, col, rep)).generate_state(2, dtype=np.uint32)
    return int(state[0]) | (int(state[1]) << 32)


@dataclass(frozen=True)
class SweepGrid:
    base: ScenarioConfig
    latencies_ms: tuple[float, ...]
    loss_rates: tuple[float, ...]
    replicates: int = 20
    flow: str | None = None
    tables: tuple[str, ...] = ("ramp", "reuse")

    def __post_init__(self) -> None:
        if not self.latencies_ms or not self.loss_rates:
            raise ConfigError("sweep grid needs at least one latency and one loss rate")
        if self.replicates < 1:
            raise ConfigError("replicates must be at least 1")


@dataclass(frozen=True)
class Replicate:
    completion_s: float
    box_s: float | None
    rto_count: int
    retransmits: int


@dataclass
class CellStats:
    one_way_ms: float
    loss: float
    replicates: list[Replicate]

    @property
    def rtt_ms(self) -> float:
        return 2 * self.one_way_ms

    @property
    def times(self) -> list[float]:
        return [r.completion_s for r in self.replicates]

    @property
    def mean(self) -> float:
        return statistics.fmean(self.times)

    @property
    def median(self) -> float:
        return statistics.median(self.times)

    @property
    def stddev(self) -> float:
        t = self.times
        return statistics.stdev(t) if len(t) > 1 else 0.0


def _cell_job(args) -> tuple:
    table, row, col, rep, cfg, flow = args
    result = run_scenario(cfg)
    fr = result.flows[flow]
    if fr.completion_time is None:
        raise RuntimeError(f"{cfg.name}: flow {flow} did not complete within {to_seconds(cfg.duration)} s")
    return (table, row, col, rep), Replicate(fr.completion_time, fr.box_width, len(fr.rto_times), fr.retransmits)


def sweep_jobs(grid: SweepGrid) -> list[tuple]:
    flow = grid.flow or grid.base.flows[0].flow_id
    jobs = []
    for table in grid.tables:
        reuse = table == "reuse"
        for row, lat in enumerate(grid.latencies_ms):
            for col, loss in enumerate(grid.loss_rates):
                cell = grid.base.with_wan(one_way_ms=lat, loss=loss).with_flow(flow, reuse_connection=reuse)
                for rep in range(grid.replicates):
                    cfg = cell.replace(seed=derive_seed(grid.base.seed, row, col, rep))
                    jobs.append((table, row, col, rep, cfg, flow))
    return jobs


def sweep(grid: SweepGrid, jobs: int = 1) -> dict[str, dict[tuple[float, float], CellStats]]:
    """Run every (table, cell, replicate) and merge by key.

    ``ramp`` uses new connections (handshake and window ramp), ``reuse`` an
    already established one.
    """
    work = sweep_jobs(grid)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            done = list(pool.map(_cell_job, work, chunksize=4))
    else:
        done = [_cell_job(w) for w in work]
    merged = dict(done)
    tables: dict[str, dict[tuple[float, float], CellStats]] = {}
    for table in grid.tables:
        cells = {}
        for row, lat in enumerate(grid.latencies_ms):
            for col, loss in enumerate(grid.loss_rates):
                reps = [merged[(table, row, col, rep)] for rep in range(grid.replicates)]
                cells[(lat, loss)] = CellStats(lat, loss, reps)
        tables[table] = cells
    return tables


# ------------------------------------------------------- optimum search


class BracketError(ValueError):
    """The search range does not contain the threshold crossing."""


def steady_goodput(cfg: ScenarioConfig, cwnd: int, flow: str, settle_s: float, measure_s: float) -> float:
    run_cfg = cfg.replace(
        plan=(),
        duration=seconds(settle_s + measure_s),
        stop_when_done=False,
    )
    sim = Simulation(run_cfg)
    policy = sim.conns[flow].policy
    if not isinstance(policy, FixedWindow):
        raise ConfigError(f"flow {flow} is not governed by a fixed window")
    policy.set_cwnd(cwnd)
    result = sim.run()
    return result.mean_goodput(flow, settle_s, settle_s + measure_s)


def find_optimal_total_cwnd(
    base: ScenarioConfig,
    lo: int,
    hi: int,
    target: float = 0.995,
    measure_s: float = 1.0,
) -> int:
    """Smallest window in [lo, hi] whose steady single-flow goodput reaches
    ``target`` of the link's payload rate, by bisection on a lossless
    variant of ``base``."""
    if lo < 1 or hi <= lo:
        raise BracketError(f"bad search range [{lo}, {hi}]")
    flow = base.flows[0]
    cfg = base.with_wan(loss=0.0).replace(
        flows=(dataclasses.replace(flow, volume=None, demand_rate=base.wan.rate_bps / 8,
                                   reuse_connection=True, start_at=0),),
    )
    dst = cfg.host(flow.dst_host)
    if cfg.routes.classify(dst.addr, flow.dst_port).kind != "fixed":
        raise ConfigError(f"flow {flow.flow_id} is not on a fixed-window route")
    rtt_s = 2 * to_seconds(cfg.wan.prop_delay)
    settle_s = 4 * rtt_s + 0.2
    ceiling = cfg.frame.payload_rate(cfg.wan.rate_bps)
    threshold = target * ceiling

    def ok(w: int) -> bool:
        return steady_goodput(cfg, w, flow.flow_id, settle_s, measure_s) >= threshold

    if not ok(hi):
        raise BracketError(f"even {hi} segments stay below {target:.1%} of the payload rate")
    if ok(lo):
        raise BracketError(f"{lo} segments already reach {target:.1%}; lower the range")
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if ok(mid):
            hi = mid
        else:
            lo = mid
    return hi


def completion_under_rtt(volume: int, payload_rate: float, design_rtt_s: float, rtt_s: float) -> float:
    """Final-ACK time of a one-shot transfer whose window was sized for
    ``design_rtt_s`` but runs over ``rtt_s``: the window caps goodput at
    ``payload_rate * design_rtt_s / rtt_s`` once the RTT exceeds the design."""
    rate = payload_rate * min(1.0, design_rtt_s / rtt_s) if rtt_s > 0 else payload_rate
    return volume / rate + rtt_s


def deadline_break_even(volume: int, payload_rate: float, design_rtt_s: float, deadline_s: float) -> float:
    """Largest RTT (seconds) at which :func:`completion_under_rtt` still meets
    ``deadline_s``. Beyond the design RTT the completion time is linear in RTT."""
    box = volume / payload_rate
    if box + design_rtt_s > deadline_s:
        raise ValueError("deadline missed even at the design RTT")
    return deadline_s / (box / design_rtt_s + 1.0)


# ------------------------------------------------------------ burst study


@dataclass(frozen=True)
class BurstOutcome:
    case: str
    n_senders: int
    per_sender_rate_bps: float
    peak_bytes: float
    analytic_bytes: float
    drops: int
    pause_events: int


def simulate_burst(
    n_senders: int,
    total_window_pkts: int,
    frame_wire_bytes: int,
    per_sender_rate_bps: float,
    egress_rate_bps: float,
    switch: SwitchConfig | None = None,
) -> tuple[float, int, int]:
    """Every sender releases its share of the window back to back at t=0.

    Returns ``(peak occupancy bytes, drops, pause events)``. Without a switch
    config the buffer is unbounded and PAUSE is off.
    """
    engine = Engine()
    cfg = switch or SwitchConfig(buffer_bytes=10**12, pause_enabled=False)
    sw = Switch(engine, cfg, egress_rate_bps)
    per = [total_window_pkts // n_senders + (1 if i < total_window_pkts % n_senders else 0) for i in range(n_senders)]
    one = np.array([frame_wire_bytes], dtype=np.int64)
    for i, count in enumerate(per):
        port = Port(engine, f"sender{i}", per_sender_rate_bps, count + 1)
        sw.attach(port, frame_wire_bytes)
        for k in range(count):
            port.enqueue(Frames(np.array([k]), one, (f"s{i}", 0, False, False)), start=False)
    for port in sw.ports:
        engine.schedule(0, port.resume)
    engine.run_until(seconds(60))
    return sw.peak_bytes, sw.drops, sw.pause_events


def run_burst_study(cfg: ScenarioConfig) -> list[BurstOutcome]:
    if cfg.burst is None:
        raise ConfigError(f"{cfg.name}: no burst section")
    b = cfg.burst
    wire = cfg.frame.full_wire
    out = []
    for case in b.cases:
        peak, drops, pauses = simulate_burst(case.n_senders, b.total_window_pkts, wire, case.per_sender_rate_bps, b.egress_rate_bps)
        analytic = min_buffer_required(case.n_senders, b.total_window_pkts, wire, case.per_sender_rate_bps, b.egress_rate_bps)
        out.append(BurstOutcome(case.name, case.n_senders, case.per_sender_rate_bps, peak, analytic, drops, pauses))
    for case in b.cases:
        if math.isinf(case.per_sender_rate_bps):
            continue
        paused = SwitchConfig(buffer_bytes=b.pause_buffer_bytes, pause_enabled=True)
        peak, drops, pauses = simulate_burst(case.n_senders, b.total_window_pkts, wire, case.per_sender_rate_bps, b.egress_rate_bps, paused)
        analytic = min_buffer_required(case.n_senders, b.total_window_pkts, wire, case.per_sender_rate_bps, b.egress_rate_bps)
        out.append(BurstOutcome(f"{case.name}+pause", case.n_senders, case.per_sender_rate_bps, peak, analytic, drops, pauses))
    return out
