"""Receiver-initiated pull policies for multi-channel TDMA mesh networks:
synthesis with analytic reliability bounds, validation, and slot-level
stochastic simulation."""

from .model import (
    FlowInstance,
    FlowSpec,
    Policy,
    Pull,
    Topology,
    Violation,
    hyperperiod,
    validate_policy,
)
from .synthesizer import (
    SynthesisConfig,
    Unschedulable,
    capacity_search,
    max_flows_search,
    response_time,
    synthesize,
)
from .simulator import LinkProcess, RunStats, degradation_sweep, run

__all__ = [
    "FlowInstance",
    "FlowSpec",
    "LinkProcess",
    "Policy",
    "Pull",
    "RunStats",
    "SynthesisConfig",
    "Topology",
    "Unschedulable",
    "Violation",
    "capacity_search",
    "degradation_sweep",
    "hyperperiod",
    "max_flows_search",
    "response_time",
    "run",
    "synthesize",
    "validate_policy",
]

__version__ = "0.1.0"
