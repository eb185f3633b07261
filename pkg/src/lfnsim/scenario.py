"""Declarative scenario description and its YAML loader.

See ``docs/scenario-schema.md`` for the field reference. Every problem found
while parsing is collected and reported together as a :class:`ConfigError`
before any simulation starts.
"""

from __future__ import annotations

import dataclasses
import ipaddress
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

import yaml

from .congestion import PolicyError, PolicyTemplate, RoutePolicyMap
from .controller import Action, ControlEvent
from .engine import millis, seconds
from .errors import ConfigError
from .net import FrameFormat, LinkConfig, SwitchConfig
from .transport import FlowSpec, TransportConfig

CANNED = ("lsst-fig2", "slice-fig3", "sweep-tables", "burst-switch", "jumbo")


@dataclass(frozen=True)
class HostSpec:
    name: str
    addr: str


@dataclass(frozen=True)
class SweepSpec:
    latencies_ms: tuple[float, ...]
    loss_rates: tuple[float, ...]
    replicates: int = 20
    tables: tuple[str, ...] = ("ramp", "reuse")


@dataclass(frozen=True)
class BurstCase:
    name: str
    n_senders: int
    per_sender_rate_bps: float


@dataclass(frozen=True)
class BurstSpec:
    total_window_pkts: int
    egress_rate_bps: float
    cases: tuple[BurstCase, ...]
    pause_buffer_bytes: int


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    hosts: tuple[HostSpec, ...]
    flows: tuple[FlowSpec, ...]
    wan: LinkConfig = LinkConfig()
    wan_reverse: LinkConfig | None = None
    access: LinkConfig = LinkConfig(prop_delay=0, loss_prob=0.0)
    switch: SwitchConfig | None = None
    frame: FrameFormat = FrameFormat()
    transport: TransportConfig = TransportConfig()
    routes: RoutePolicyMap = field(default_factory=RoutePolicyMap)
    plan: tuple[ControlEvent, ...] = ()
    total_cwnd: int | None = None
    duration: int = seconds(10)
    seed: int = 1
    bin_width: int = millis(100)
    stop_when_done: bool = True
    description: str = ""
    sweep: SweepSpec | None = None
    burst: BurstSpec | None = None

    @property
    def reverse(self) -> LinkConfig:
        return self.wan_reverse if self.wan_reverse is not None else self.wan

    def host(self, name: str) -> HostSpec:
        for h in self.hosts:
            if h.name == name:
                return h
        raise KeyError(name)

    def replace(self, **changes: Any) -> "ScenarioConfig":
        return dataclasses.replace(self, **changes)

    def with_wan(self, *, one_way_ms: float | None = None, loss: float | None = None) -> "ScenarioConfig":
        """Same scenario with both WAN directions re-parameterised."""
        changes = {}
        if one_way_ms is not None:
            changes["prop_delay"] = millis(one_way_ms)
        if loss is not None:
            changes["loss_prob"] = loss
        rev = dataclasses.replace(self.reverse, **changes)
        return self.replace(wan=dataclasses.replace(self.wan, **changes), wan_reverse=rev)

    def with_flow(self, flow_id: str, **changes: Any) -> "ScenarioConfig":
        flows = tuple(dataclasses.replace(f, **changes) if f.flow_id == flow_id else f for f in self.flows)
        return self.replace(flows=flows)


class _Reader:
    def __init__(self) -> None:
        self.problems: list[str] = []

    def fail(self, where: str, msg: str) -> None:
        self.problems.append(f"{where}: {msg}")

    def get(self, data: dict, key: str, where: str, kind, default=..., check=None):
        if not isinstance(data, dict):
            self.fail(where, "expected a mapping")
            return None if default is ... else default
        path = f"{where}.{key}" if where else key
        if key not in data or data[key] is None:
            if default is ...:
                self.fail(path, "required field missing")
                return None
            return default
        value = data[key]
        try:
            if kind is bool:
                if not isinstance(value, bool):
                    raise TypeError
            elif kind is int:
                if isinstance(value, bool) or float(value) != int(float(value)):
                    raise TypeError
                value = int(float(value))
            elif kind is float:
                if isinstance(value, bool):
                    raise TypeError
                value = float(value)
            elif kind is str:
                if not isinstance(value, str):
                    raise TypeError
            elif kind is list:
                if not isinstance(value, list):
                    raise TypeError
            elif kind is dict:
                if not isinstance(value, dict):
                    raise TypeError
        except (TypeError, ValueError):
            self.fail(path, f"expected {kind.__name__}, got {value!r}")
            return None if default is ... else default
        if check is not None:
            msg = check(value)
            if msg:
                self.fail(path, msg)
        return value

    def unknown(self, data: dict, allowed: set[str], where: str) -> None:
        if isinstance(data, dict):
            for key in data:
                if key not in allowed:
                    self.fail(f"{where}.{key}" if where else key, "unknown field")


def _positive(v):
    return None if v > 0 else "must be positive"


def _non_negative(v):
    return None if v >= 0 else "must be non-negative"


def _probability(v):
    return None if 0.0 <= v <= 1.0 else "must lie in [0, 1]"


def _link(r: _Reader, data: dict, where: str, default: LinkConfig) -> LinkConfig:
    r.unknown(data, {"rate_bps", "delay_ms", "loss", "queue_limit"}, where)
    rate = r.get(data, "rate_bps", where, float, default.rate_bps, _positive)
    delay = r.get(data, "delay_ms", where, float, default.prop_delay / 1e6, _non_negative)
    loss = r.get(data, "loss", where, float, default.loss_prob, _probability)
    limit = r.get(data, "queue_limit", where, int, default.queue_limit, _positive)
    try:
        return LinkConfig(int(rate), millis(delay), loss, limit)
    except (TypeError, ValueError) as exc:
        r.fail(where, str(exc))
        return default


def parse_scenario(data: Any, source: str = "<scenario>") -> ScenarioConfig:
    r = _Reader()
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: top level must be a mapping")
    r.unknown(
        data,
        {"name", "description", "seed", "duration_s", "bin_width_s", "stop_when_done", "frame", "transport",
         "network", "hosts", "routes", "default_policy", "controller", "flows", "plan", "sweep", "burst"},
        "",
    )
    name = r.get(data, "name", "", str)
    description = r.get(data, "description", "", str, "")
    seed = r.get(data, "seed", "", int, 1, lambda v: None if 0 <= v < 2**64 else "must be a 64-bit unsigned integer")
    duration = r.get(data, "duration_s", "", float, 10.0, _non_negative)
    bin_width = r.get(data, "bin_width_s", "", float, 0.1, _positive)
    stop_when_done = r.get(data, "stop_when_done", "", bool, True)

    fdata = r.get(data, "frame", "", dict, {})
    r.unknown(fdata, {"mtu", "transport_header", "link_overhead"}, "frame")
    frame = FrameFormat()
    try:
        frame = FrameFormat(
            r.get(fdata, "mtu", "frame", int, 1500, _positive),
            r.get(fdata, "transport_header", "frame", int, 52, _non_negative),
            r.get(fdata, "link_overhead", "frame", int, 38, _non_negative),
        )
    except (TypeError, ValueError) as exc:
        r.fail("frame", str(exc))

    tdata = r.get(data, "transport", "", dict, {})
    r.unknown(tdata, {"burst_bytes", "tx_queue_frames", "ramp_window_bytes", "rwnd_bytes", "rto_initial_ms",
                      "rto_min_ms", "rto_max_ms", "rto_granularity_ms", "rto_style", "dupthresh", "sack_history"},
             "transport")
    d = TransportConfig()
    transport = d
    try:
        transport = TransportConfig(
            burst_bytes=r.get(tdata, "burst_bytes", "transport", int, d.burst_bytes, _positive),
            tx_queue_frames=r.get(tdata, "tx_queue_frames", "transport", int, d.tx_queue_frames, _positive),
            ramp_window_bytes=r.get(tdata, "ramp_window_bytes", "transport", int, d.ramp_window_bytes, _positive),
            rwnd_bytes=r.get(tdata, "rwnd_bytes", "transport", int, d.rwnd_bytes, _positive),
            rto_initial=millis(r.get(tdata, "rto_initial_ms", "transport", float, d.rto_initial / 1e6, _positive)),
            rto_min=millis(r.get(tdata, "rto_min_ms", "transport", float, d.rto_min / 1e6, _positive)),
            rto_max=millis(r.get(tdata, "rto_max_ms", "transport", float, d.rto_max / 1e6, _positive)),
            rto_granularity=millis(r.get(tdata, "rto_granularity_ms", "transport", float,
                                         d.rto_granularity / 1e6, _non_negative)),
            rto_style=r.get(tdata, "rto_style", "transport", str, d.rto_style,
                            lambda v: None if v in ("rfc", "linux") else "must be 'rfc' or 'linux'"),
            dupthresh=r.get(tdata, "dupthresh", "transport", int, d.dupthresh, _positive),
            sack_history=r.get(tdata, "sack_history", "transport", int, d.sack_history, _non_negative),
        )
    except (TypeError, ValueError) as exc:
        r.fail("transport", str(exc))

    ndata = r.get(data, "network", "", dict, {})
    r.unknown(ndata, {"wan", "wan_reverse", "access", "switch"}, "network")
    wan = _link(r, r.get(ndata, "wan", "network", dict, {}), "network.wan", LinkConfig())
    wan_reverse = None
    if isinstance(ndata, dict) and ndata.get("wan_reverse") is not None:
        wan_reverse = _link(r, r.get(ndata, "wan_reverse", "network", dict, {}), "network.wan_reverse", wan)
    access = _link(r, r.get(ndata, "access", "network", dict, {}), "network.access",
                   LinkConfig(prop_delay=0, loss_prob=0.0))
    switch = None
    if isinstance(ndata, dict) and ndata.get("switch") is not None:
        sdata = r.get(ndata, "switch", "network", dict, {})
        r.unknown(sdata, {"buffer_bytes", "pause", "pause_high_bytes", "pause_low_bytes"}, "network.switch")
        try:
            switch = SwitchConfig(
                buffer_bytes=r.get(sdata, "buffer_bytes", "network.switch", int, ..., _positive),
                pause_enabled=r.get(sdata, "pause", "network.switch", bool, True),
                pause_high_watermark=r.get(sdata, "pause_high_bytes", "network.switch", int, None, _non_negative),
                pause_low_watermark=r.get(sdata, "pause_low_bytes", "network.switch", int, None, _non_negative),
            )
        except (TypeError, ValueError) as exc:
            r.fail("network.switch", str(exc))

    hosts: list[HostSpec] = []
    for i, h in enumerate(r.get(data, "hosts", "", list, [])):
        where = f"hosts[{i}]"
        r.unknown(h, {"name", "addr"}, where)
        hname = r.get(h, "name", where, str)
        addr = r.get(h, "addr", where, str)
        if addr is not None:
            try:
                ipaddress.ip_address(addr)
            except ValueError:
                r.fail(f"{where}.addr", f"not an IP address: {addr!r}")
                addr = None
        if hname is not None and addr is not None:
            if any(x.name == hname for x in hosts):
                r.fail(f"{where}.name", f"duplicate host {hname!r}")
            hosts.append(HostSpec(hname, addr))
    host_names = {h.name for h in hosts}

    routes = RoutePolicyMap()
    default_policy = r.get(data, "default_policy", "", dict, {"type": "scalable"})
    try:
        routes = RoutePolicyMap(default=PolicyTemplate.from_dict(default_policy))
    except PolicyError as exc:
        r.fail("default_policy", str(exc))
    for i, entry in enumerate(r.get(data, "routes", "", list, [])):
        where = f"routes[{i}]"
        r.unknown(entry, {"name", "dst", "ports", "policy"}, where)
        dst = r.get(entry, "dst", where, str)
        ports = r.get(entry, "ports", where, list, [0, 65535])
        pol = r.get(entry, "policy", where, dict)
        rname = r.get(entry, "name", where, str, f"route{i}")
        if dst is None or pol is None:
            continue
        try:
            if len(ports) != 2:
                raise PolicyError("ports must be [low, high]")
            routes.add(dst, (int(ports[0]), int(ports[1])), PolicyTemplate.from_dict(pol), rname)
        except (PolicyError, ValueError, TypeError) as exc:
            r.fail(where, str(exc))

    cdata = r.get(data, "controller", "", dict, {})
    r.unknown(cdata, {"total_cwnd"}, "controller")
    total_cwnd = r.get(cdata, "total_cwnd", "controller", int, None, _positive)

    flows: list[FlowSpec] = []
    for i, f in enumerate(r.get(data, "flows", "", list, [])):
        where = f"flows[{i}]"
        r.unknown(f, {"id", "src", "dst", "dst_port", "volume_bytes", "demand_Bps", "reuse", "start_s"}, where)
        fid = r.get(f, "id", where, str)
        src = r.get(f, "src", where, str)
        dst = r.get(f, "dst", where, str)
        port = r.get(f, "dst_port", where, int, ..., lambda v: None if 0 <= v <= 65535 else "must be a port number")
        volume = r.get(f, "volume_bytes", where, int, None, _positive)
        demand = r.get(f, "demand_Bps", where, float, None, _positive)
        reuse = r.get(f, "reuse", where, bool, True)
        start = r.get(f, "start_s", where, float, None, _non_negative) if isinstance(f, dict) and "start_s" in f else 0.0
        for role, hname in (("src", src), ("dst", dst)):
            if hname is not None and hname not in host_names:
                r.fail(f"{where}.{role}", f"unknown host {hname!r}")
        if fid is not None and any(x.flow_id == fid for x in flows):
            r.fail(f"{where}.id", f"duplicate flow {fid!r}")
        if None in (fid, src, dst, port):
            continue
        try:
            flows.append(FlowSpec(fid, src, dst, port, volume, demand, reuse, None if start is None else seconds(start)))
        except ValueError as exc:
            r.fail(where, str(exc))
    flow_ids = {f.flow_id for f in flows}

    plan: list[ControlEvent] = []
    for i, ev in enumerate(r.get(data, "plan", "", list, [])):
        where = f"plan[{i}]"
        r.unknown(ev, {"at_s", "after_complete", "actions"}, where)
        at = r.get(ev, "at_s", where, float, None, _non_negative)
        after = r.get(ev, "after_complete", where, list, [])
        for flow in after:
            if flow not in flow_ids:
                r.fail(f"{where}.after_complete", f"unknown flow {flow!r}")
        actions = []
        for j, a in enumerate(r.get(ev, "actions", where, list, [])):
            aw = f"{where}.actions[{j}]"
            actions.append(_action(r, a, aw, flow_ids, host_names, {e.name for e in routes.entries}))
        if any(a is None for a in actions):
            continue
        try:
            plan.append(ControlEvent(tuple(actions), None if at is None else seconds(at), tuple(after)))
        except ConfigError as exc:
            r.fail(where, str(exc))
    if any(a.share is not None for ev in plan for a in ev.actions) and total_cwnd is None:
        r.fail("controller.total_cwnd", "required when plan actions use shares")

    sweep = None
    if isinstance(data.get("sweep"), dict):
        sw = data["sweep"]
        r.unknown(sw, {"latencies_ms", "losses", "reps", "tables"}, "sweep")
        lat = r.get(sw, "latencies_ms", "sweep", list)
        los = r.get(sw, "losses", "sweep", list)
        reps = r.get(sw, "reps", "sweep", int, 20, _positive)
        tables = r.get(sw, "tables", "sweep", list, ["ramp", "reuse"])
        bad = [t for t in tables if t not in ("ramp", "reuse")]
        if bad:
            r.fail("sweep.tables", f"unknown table(s) {bad}")
        if lat is not None and los is not None:
            try:
                sweep = SweepSpec(tuple(float(x) for x in lat), tuple(float(x) for x in los), reps, tuple(tables))
                if any(x < 0 for x in sweep.latencies_ms) or any(not 0 <= x <= 1 for x in sweep.loss_rates):
                    r.fail("sweep", "latencies must be non-negative and losses in [0, 1]")
            except (TypeError, ValueError):
                r.fail("sweep", "latencies_ms and losses must be numeric lists")
    elif data.get("sweep") is not None:
        r.fail("sweep", "expected a mapping")

    burst = None
    if isinstance(data.get("burst"), dict):
        b = data["burst"]
        r.unknown(b, {"total_window_pkts", "egress_rate_bps", "pause_buffer_bytes", "cases"}, "burst")
        cases = []
        for i, c in enumerate(r.get(b, "cases", "burst", list, [])):
            cw = f"burst.cases[{i}]"
            r.unknown(c, {"name", "n_senders", "per_sender_rate_bps"}, cw)
            cname = r.get(c, "name", cw, str, f"case{i}")
            n = r.get(c, "n_senders", cw, int, ..., _positive)
            rate = c.get("per_sender_rate_bps") if isinstance(c, dict) else None
            if rate in ("inf", "infinite", "unbounded"):
                rate = float("inf")
            else:
                rate = r.get(c, "per_sender_rate_bps", cw, float, ..., _positive)
            if n is not None and rate is not None:
                cases.append(BurstCase(cname, n, rate))
        burst = BurstSpec(
            r.get(b, "total_window_pkts", "burst", int, 14764, _positive),
            r.get(b, "egress_rate_bps", "burst", float, 10e9, _positive),
            tuple(cases),
            r.get(b, "pause_buffer_bytes", "burst", int, 2_000_000, _positive),
        )
    elif data.get("burst") is not None:
        r.fail("burst", "expected a mapping")

    if not flows and sweep is None and burst is None:
        r.fail("flows", "scenario defines no flows")
    if r.problems:
        raise ConfigError([f"{source}: {p}" for p in r.problems])
    return ScenarioConfig(
        name=name,
        hosts=tuple(hosts),
        flows=tuple(flows),
        wan=wan,
        wan_reverse=wan_reverse,
        access=access,
        switch=switch,
        frame=frame,
        transport=transport,
        routes=routes,
        plan=tuple(plan),
        total_cwnd=total_cwnd,
        duration=seconds(duration),
        seed=seed,
        bin_width=seconds(bin_width),
        stop_when_done=stop_when_done,
        description=description,
        sweep=sweep,
        burst=burst,
    )


def _action(r: _Reader, a: Any, where: str, flows: set, hosts: set, routes: set) -> Action | None:
    if not isinstance(a, dict) or len(a) != 1:
        r.fail(where, "expected a single-key mapping: set_cwnd or start_flow")
        return None
    (kind, body), = a.items()
    if kind == "start_flow":
        if body not in flows:
            r.fail(f"{where}.start_flow", f"unknown flow {body!r}")
            return None
        return Action("start_flow", flow=body)
    if kind != "set_cwnd":
        r.fail(where, f"unknown action {kind!r}")
        return None
    r.unknown(body, {"flow", "host", "route", "cwnd", "share"}, f"{where}.set_cwnd")
    if not isinstance(body, dict):
        r.fail(f"{where}.set_cwnd", "expected a mapping")
        return None
    sw = f"{where}.set_cwnd"
    flow = r.get(body, "flow", sw, str, None)
    host = r.get(body, "host", sw, str, None)
    route = r.get(body, "route", sw, str, None)
    if flow is not None and flow not in flows:
        r.fail(f"{sw}.flow", f"unknown flow {flow!r}")
        return None
    if host is not None and host not in hosts:
        r.fail(f"{sw}.host", f"unknown host {host!r}")
        return None
    if route is not None and route not in routes:
        r.fail(f"{sw}.route", f"unknown route {route!r}")
        return None
    try:
        return Action(
            "set_cwnd",
            flow=flow,
            host=host,
            route=route,
            cwnd=r.get(body, "cwnd", sw, int, None, _non_negative),
            share=r.get(body, "share", sw, float, None, _probability),
        )
    except ConfigError as exc:
        r.fail(sw, str(exc))
        return None


def load_scenario(path: str | Path) -> ScenarioConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise OSError(f"cannot read scenario {path}: {exc.strerror}") from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML: {exc}") from None
    return parse_scenario(data, str(path))


def canned_path(name: str) -> Path:
    if name not in CANNED:
        raise KeyError(f"no canned scenario {name!r}; available: {', '.join(CANNED)}")
    return Path(str(resources.files("lfnsim") / "scenarios" / f"{name}.yaml"))


def load_canned(name: str) -> ScenarioConfig:
    return load_scenario(canned_path(name))


def resolve_scenario(arg: str) -> ScenarioConfig:
    """Load a scenario from a path, or by canned name if no such file exists."""
    path = Path(arg)
    if not path.exists() and arg in CANNED:
        path = canned_path(arg)
    return load_scenario(path)
