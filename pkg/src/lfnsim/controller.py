"""Application-level bandwidth controller: window arithmetic and timed or
completion-triggered reallocation plans."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from typing import Callable

from .congestion import FixedWindow, PolicyTable
from .engine import NS_PER_SEC, Engine
from .errors import ConfigError

SHARE_EPSILON = 1e-9


def share_to_cwnd(total: int, fraction: float) -> int:
    """Nearest integer to ``total * fraction``, halves rounded away from zero."""
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"fraction must lie in [0, 1], got {fraction!r}")
    exact = Decimal(int(total)) * Decimal(repr(float(fraction)))
    return int(exact.quantize(Decimal(1), rounding=ROUND_HALF_UP))


def total_cwnd_for(payload_rate: float, rtt: int, mss: int, headroom: float = 0.01) -> int:
    """Window in segments that keeps ``payload_rate`` bytes/s flowing over ``rtt`` ns."""
    if payload_rate <= 0 or mss <= 0 or rtt < 0 or headroom < 0:
        raise ValueError("payload_rate and mss must be positive, rtt and headroom non-negative")
    bdp = Decimal(repr(float(payload_rate))) * Decimal(int(rtt)) / Decimal(NS_PER_SEC) / Decimal(mss)
    scaled = bdp * (Decimal(1) + Decimal(repr(float(headroom))))
    return max(1, math.ceil(scaled))


@dataclass(frozen=True)
class AllocationPlan:
    total_cwnd: int
    shares: dict[str, float]

    def __post_init__(self) -> None:
        bad = {k: v for k, v in self.shares.items() if not 0.0 <= v <= 1.0}
        if bad:
            raise ConfigError([f"share for {k} must lie in [0, 1], got {v}" for k, v in bad.items()])
        total = sum(self.shares.values())
        if total > 1.0 + SHARE_EPSILON:
            raise ConfigError(f"shares sum to {total:.6f} > 1")

    def cwnds(self) -> dict[str, int]:
        return {flow: share_to_cwnd(self.total_cwnd, f) for flow, f in self.shares.items()}


@dataclass(frozen=True)
class Action:
    """One directive. ``kind`` is ``set_cwnd`` or ``start_flow``.

    For ``set_cwnd`` exactly one selector (``flow``, ``host`` or ``route``) is
    set together with either an absolute ``cwnd`` or a ``share`` of the
    controller's total window.
    """

    kind: str
    flow: str | None = None
    host: str | None = None
    route: str | None = None
    cwnd: int | None = None
    share: float | None = None

    def __post_init__(self) -> None:
        if self.kind == "start_flow":
            if self.flow is None:
                raise ConfigError("start_flow needs a flow")
        elif self.kind == "set_cwnd":
            selectors = [s for s in (self.flow, self.host, self.route) if s is not None]
            if len(selectors) != 1:
                raise ConfigError("set_cwnd needs exactly one of flow, host, route")
            if (self.cwnd is None) == (self.share is None):
                raise ConfigError("set_cwnd needs exactly one of cwnd, share")
            if self.cwnd is not None and self.cwnd < 0:
                raise ConfigError("cwnd must be non-negative")
            if self.share is not None and not 0.0 <= self.share <= 1.0:
                raise ConfigError("share must lie in [0, 1]")
        else:
            raise ConfigError(f"unknown action {self.kind!r}")


@dataclass(frozen=True)
class ControlEvent:
    """Actions applied together, either at ``at`` ns or when every flow in
    ``after_complete`` has received its final ACK."""

    actions: tuple[Action, ...]
    at: int | None = None
    after_complete: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if (self.at is None) == (not self.after_complete):
            raise ConfigError("a control event needs either a time or a completion trigger")
        if self.at is not None and self.at < 0:
            raise ConfigError("control event time must be non-negative")


@dataclass(frozen=True)
class ActionRecord:
    time: int
    flow: str
    old_cwnd: int
    new_cwnd: int


@dataclass
class Controller:
    """Executes a plan against live connections.

    ``flows`` maps flow ids to objects with ``start()`` and ``on_complete``
    hooks (the harness supplies them); ``total_cwnd`` converts shares.
    """

    engine: Engine
    table: PolicyTable
    total_cwnd: int
    flows: dict[str, object]
    start_flow: Callable[[str], None]
    log: list[ActionRecord] = field(default_factory=list)
    starts: list[tuple[int, str]] = field(default_factory=list)
    sum_violations: list[tuple[int, int]] = field(default_factory=list)
    is_active: Callable[[str], bool] = lambda flow: True

    def validate(self, events: list[ControlEvent]) -> None:
        problems = []
        for i, ev in enumerate(events):
            for flow in ev.after_complete:
                if flow not in self.flows:
                    problems.append(f"plan[{i}].after_complete: unknown flow {flow!r}")
            for j, action in enumerate(ev.actions):
                if action.flow is not None and action.flow not in self.flows:
                    problems.append(f"plan[{i}].actions[{j}]: unknown flow {action.flow!r}")
                if action.kind == "set_cwnd" and action.flow is not None:
                    binding = self.table.bindings.get(action.flow)
                    if binding is not None and not isinstance(binding.policy, FixedWindow):
                        problems.append(f"plan[{i}].actions[{j}]: flow {action.flow!r} is not FixedWindow")
        if problems:
            raise ConfigError(problems)

    def execute_plan(self, events: list[ControlEvent]) -> list[ActionRecord]:
        """Schedule every event; the returned log fills in as the run proceeds."""
        self.validate(events)
        for ev in events:
            if ev.at is not None:
                self.engine.schedule(ev.at, self._apply, ev)
            else:
                self._watch(ev)
        return self.log

    def _watch(self, ev: ControlEvent) -> None:
        waiting = set(ev.after_complete)

        def done(conn) -> None:
            waiting.discard(conn.flow_id)
            if not waiting:
                self._apply(ev)

        for flow in ev.after_complete:
            self.flows[flow].on_complete.append(done)

    def _apply(self, ev: ControlEvent) -> None:
        now = self.engine.now
        touched: list[str] = []
        for action in ev.actions:
            if action.kind == "start_flow":
                self.starts.append((now, action.flow))
                self.start_flow(action.flow)
                continue
            value = action.cwnd if action.cwnd is not None else share_to_cwnd(self.total_cwnd, action.share)
            changes = self.table.set_cwnd(value, connection=action.flow, host=action.host, route=action.route, at=now)
            for conn_id, old, new in changes:
                self.log.append(ActionRecord(now, conn_id, old, new))
                touched.append(conn_id)
        self._check_sum(now)
        # a raised window takes effect now, not at the next ACK
        for conn_id in dict.fromkeys(touched):
            pump = getattr(self.flows.get(conn_id), "pump", None)
            if pump is not None:
                pump()

    def active_fixed_sum(self) -> tuple[int, int]:
        total = 0
        n = 0
        for conn_id, binding in self.table.bindings.items():
            if isinstance(binding.policy, FixedWindow) and self.is_active(conn_id):
                total += binding.policy.cwnd
                n += 1
        return total, n

    def _check_sum(self, now: int) -> None:
        total, n = self.active_fixed_sum()
        if total > self.total_cwnd + n / 2:
            self.sum_violations.append((now, total))
