"""Discrete-event simulator for fixed-window bulk transfer over long fat networks."""

from .congestion import FixedWindow, PolicyTable, PolicyTemplate, Reno, RoutePolicyMap, ScalableTcp
from .controller import AllocationPlan, Controller, share_to_cwnd, total_cwnd_for
from .engine import Engine, RngStream, millis, seconds, to_seconds
from .errors import ConfigError
from .harness import (
    RunResult,
    SweepGrid,
    box_width,
    derive_seed,
    find_optimal_total_cwnd,
    run_burst_study,
    run_scenario,
    sweep,
)
from .net import FrameFormat, LinkConfig, SwitchConfig, min_buffer_required, serialization_ns, wire_size
from .scenario import ScenarioConfig, load_canned, load_scenario, parse_scenario
from .transport import FlowSpec, TransportConfig

__version__ = "0.1.0"

__all__ = [
    "AllocationPlan", "ConfigError", "Controller", "Engine", "FixedWindow", "FlowSpec", "FrameFormat",
    "LinkConfig", "PolicyTable", "PolicyTemplate", "Reno", "RngStream", "RoutePolicyMap", "RunResult",
    "ScalableTcp", "ScenarioConfig", "SwitchConfig", "SweepGrid", "TransportConfig", "box_width",
    "derive_seed", "find_optimal_total_cwnd", "load_canned", "load_scenario", "millis", "min_buffer_required",
    "parse_scenario", "run_burst_study", "run_scenario", "seconds", "serialization_ns", "share_to_cwnd",
    "sweep", "to_seconds", "total_cwnd_for", "wire_size",
]
