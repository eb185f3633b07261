"""Congestion-window policies and destination-based policy routing."""

from __future__ import annotations

import ipaddress
from dataclasses import dataclass, field
from typing import Any, Iterable


class PolicyError(ValueError):
    """Raised for invalid policy operations, e.g. pinning an adaptive flow."""


class CcPolicy:
    """Interface shared by all window policies. ``cwnd`` is in segments."""

    kind = "abstract"
    cwnd: float

    def window(self) -> int:
        return int(self.cwnd)

    def on_ack(self, n_acked: int = 1) -> None:
        raise NotImplementedError

    def on_loss(self) -> None:
        raise NotImplementedError

    def on_timeout(self) -> None:
        raise NotImplementedError


class FixedWindow(CcPolicy):
    """Window set from outside and never touched by ACK, loss or timeout."""

    kind = "fixed"

    def __init__(self, cwnd: int = 0):
        self.cwnd = _check_cwnd(cwnd)
        self.history: list[tuple[int, int]] = [(-1, self.cwnd)]

    def window(self) -> int:
        return self.cwnd

    def on_ack(self, n_acked: int = 1) -> None:
        pass

    def on_loss(self) -> None:
        pass

    def on_timeout(self) -> None:
        pass

    def set_cwnd(self, value: int, at: int = 0) -> int:
        old = self.cwnd
        self.cwnd = _check_cwnd(value)
        self.history.append((at, self.cwnd))
        return old

    def __repr__(self) -> str:
        return f"FixedWindow(cwnd={self.cwnd})"


def _check_cwnd(value: Any) -> int:
    if isinstance(value, bool) or int(value) != value or value < 0:
        raise PolicyError(f"cwnd must be a non-negative integer, got {value!r}")
    return int(value)


class ScalableTcp(CcPolicy):
    """Multiplicative-increase, multiplicative-decrease window.

    Each ACK in congestion avoidance adds ``increase_per_ack`` segments; a loss
    scales the window by ``decrease_factor``. Below ``ssthresh`` the window
    grows by one segment per ACK (slow start).
    """

    kind = "scalable"

    def __init__(
        self,
        cwnd: float = 10.0,
        ssthresh: float = float("inf"),
        increase_per_ack: float = 0.01,
        decrease_factor: float = 0.875,
        min_cwnd: float = 2.0,
    ):
        if not 0 < decrease_factor < 1:
            raise PolicyError("decrease_factor must lie in (0, 1)")
        if increase_per_ack <= 0:
            raise PolicyError("increase_per_ack must be positive")
        self.min_cwnd = float(min_cwnd)
        self.cwnd = max(float(cwnd), self.min_cwnd)
        self.ssthresh = float(ssthresh)
        self.increase_per_ack = increase_per_ack
        self.decrease_factor = decrease_factor
        self.history: list[float] = [self.cwnd]

    def on_ack(self, n_acked: int = 1) -> None:
        # slow start up to ssthresh, the remainder grows linearly
        remaining = float(n_acked)
        if self.cwnd < self.ssthresh:
            step = min(remaining, self.ssthresh - self.cwnd)
            self.cwnd += step
            remaining -= step
        if remaining > 0:
            self.cwnd += self.increase_per_ack * remaining

    def on_loss(self) -> None:
        self.cwnd = max(self.min_cwnd, self.decrease_factor * self.cwnd)
        self.ssthresh = self.cwnd
        self.history.append(self.cwnd)

    def on_timeout(self) -> None:
        self.ssthresh = max(self.min_cwnd, self.decrease_factor * self.cwnd)
        self.cwnd = self.min_cwnd
        self.history.append(self.cwnd)

    def __repr__(self) -> str:
        return f"ScalableTcp(cwnd={self.cwnd:.2f}, ssthresh={self.ssthresh:.2f})"


class Reno(CcPolicy):
    """Classic AIMD baseline."""

    kind = "reno"

    def __init__(self, cwnd: float = 10.0, ssthresh: float = float("inf")):
        self.cwnd = max(float(cwnd), 2.0)
        self.ssthresh = float(ssthresh)

    def on_ack(self, n_acked: int = 1) -> None:
        for _ in range(n_acked):
            if self.cwnd < self.ssthresh:
                self.cwnd += 1.0
            else:
                self.cwnd += 1.0 / self.cwnd

    def on_loss(self) -> None:
        self.cwnd = max(2.0, self.cwnd / 2)
        self.ssthresh = self.cwnd

    def on_timeout(self) -> None:
        self.ssthresh = max(2.0, self.cwnd / 2)
        self.cwnd = 2.0


_KINDS = {"fixed": FixedWindow, "scalable": ScalableTcp, "reno": Reno}


@dataclass(frozen=True)
class PolicyTemplate:
    """Recipe for a fresh per-connection policy, e.g. ``PolicyTemplate("fixed", {"cwnd": 738})``."""

    kind: str
    params: tuple[tuple[str, Any], ...] = ()

    def __post_init__(self) -> None:
        if self.kind not in _KINDS:
            raise PolicyError(f"unknown policy type {self.kind!r}; expected one of {sorted(_KINDS)}")

    @classmethod
    def of(cls, kind: str, **params: Any) -> "PolicyTemplate":
        return cls(kind, tuple(sorted(params.items())))

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "PolicyTemplate":
        data = dict(data)
        kind = data.pop("type", None)
        if kind is None:
            raise PolicyError("policy needs a 'type'")
        template = cls.of(kind, **data)
        template.instantiate()
        return template

    def instantiate(self) -> CcPolicy:
        try:
            return _KINDS[self.kind](**dict(self.params))
        except TypeError as exc:
            raise PolicyError(f"bad parameters for {self.kind} policy: {exc}") from None

    def with_params(self, **params: Any) -> "PolicyTemplate":
        merged = dict(self.params)
        merged.update(params)
        return PolicyTemplate.of(self.kind, **merged)


@dataclass(frozen=True)
class RouteEntry:
    network: ipaddress.IPv4Network | ipaddress.IPv6Network
    ports: tuple[int, int]
    template: PolicyTemplate
    name: str = ""

    def matches(self, addr, port: int) -> bool:
        return addr in self.network and self.ports[0] <= port <= self.ports[1]


@dataclass
class RoutePolicyMap:
    """Ordered (address range, port range) -> policy template table."""

    default: PolicyTemplate = field(default_factory=lambda: PolicyTemplate.of("scalable"))
    entries: list[RouteEntry] = field(default_factory=list)

    def add(self, network: str, ports: tuple[int, int], template: PolicyTemplate, name: str = "") -> RouteEntry:
        lo, hi = ports
        if not 0 <= lo <= hi <= 65535:
            raise PolicyError(f"bad port range {ports!r}")
        entry = RouteEntry(ipaddress.ip_network(network, strict=False), (lo, hi), template, name or f"route{len(self.entries)}")
        self.entries.append(entry)
        return entry

    def lookup(self, dst_addr: str, dst_port: int) -> RouteEntry | None:
        addr = ipaddress.ip_address(dst_addr)
        for entry in self.entries:
            if entry.matches(addr, dst_port):
                return entry
        return None

    def classify(self, dst_addr: str, dst_port: int) -> PolicyTemplate:
        entry = self.lookup(dst_addr, dst_port)
        return entry.template if entry is not None else self.default

    def replace_template(self, name: str, template: PolicyTemplate) -> None:
        for i, entry in enumerate(self.entries):
            if entry.name == name:
                self.entries[i] = RouteEntry(entry.network, entry.ports, template, entry.name)
                return
        raise PolicyError(f"no route named {name!r}")


def classify(dst_addr: str, dst_port: int, route_map: RoutePolicyMap) -> PolicyTemplate:
    return route_map.classify(dst_addr, dst_port)


@dataclass
class Binding:
    """A connection's policy together with the attributes selectors match on."""

    conn_id: str
    host: str
    route: str | None
    policy: CcPolicy


class PolicyTable:
    """Live policies for every connection, addressable by host, route or
    connection id. Host- and route-level values also apply to connections
    created later."""

    def __init__(self, route_map: RoutePolicyMap):
        self.route_map = route_map
        self.bindings: dict[str, Binding] = {}
        self.host_cwnd: dict[str, int] = {}

    def bind(self, conn_id: str, host: str, dst_addr: str, dst_port: int) -> CcPolicy:
        if conn_id in self.bindings:
            raise PolicyError(f"connection {conn_id!r} already bound")
        entry = self.route_map.lookup(dst_addr, dst_port)
        template = entry.template if entry is not None else self.route_map.default
        policy = template.instantiate()
        if isinstance(policy, FixedWindow) and host in self.host_cwnd:
            policy.set_cwnd(self.host_cwnd[host], at=-1)
        self.bindings[conn_id] = Binding(conn_id, host, entry.name if entry else None, policy)
        return policy

    def select(self, *, connection: str | None = None, host: str | None = None, route: str | None = None) -> list[Binding]:
        given = [s for s in (connection, host, route) if s is not None]
        if len(given) != 1:
            raise PolicyError("exactly one of connection, host or route must be given")
        if connection is not None:
            if connection not in self.bindings:
                raise PolicyError(f"unknown connection {connection!r}")
            return [self.bindings[connection]]
        if host is not None:
            return [b for b in self.bindings.values() if b.host == host and isinstance(b.policy, FixedWindow)]
        return [b for b in self.bindings.values() if b.route == route]

    def set_cwnd(
        self,
        value: int,
        *,
        connection: str | None = None,
        host: str | None = None,
        route: str | None = None,
        at: int = 0,
    ) -> list[tuple[str, int, int]]:
        """Pin the window of every FixedWindow policy the selector matches.

        Returns ``(conn_id, old, new)`` per updated policy. Connection and
        route selectors that reach an adaptive policy are rejected.
        """
        value = _check_cwnd(value)
        matched = self.select(connection=connection, host=host, route=route)
        adaptive = [b.conn_id for b in matched if not isinstance(b.policy, FixedWindow)]
        if adaptive:
            raise PolicyError(f"set_cwnd would override adaptive policies on {adaptive}")
        if route is not None:
            entry = next((e for e in self.route_map.entries if e.name == route), None)
            if entry is None:
                raise PolicyError(f"unknown route {route!r}")
            if entry.template.kind != "fixed":
                raise PolicyError(f"route {route!r} uses an adaptive policy")
            self.route_map.replace_template(route, entry.template.with_params(cwnd=value))
        if host is not None:
            self.host_cwnd[host] = value
        changes = []
        for binding in matched:
            old = binding.policy.set_cwnd(value, at=at)
            changes.append((binding.conn_id, old, value))
        return changes


def apply_events(policy: CcPolicy, events: Iterable[str]) -> list[float]:
    """Feed a sequence of ``"ack"``/``"loss"``/``"timeout"`` events and return
    the window after each one."""
    trace = []
    for event in events:
        if event == "ack":
            policy.on_ack(1)
        elif event == "loss":
            policy.on_loss()
        elif event == "timeout":
            policy.on_timeout()
        else:
            raise ValueError(f"unknown event {event!r}")
        trace.append(policy.cwnd)
    return trace
