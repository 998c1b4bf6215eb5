"""Simulation and sample-path verification of redundant chunk-download
scheduling for erasure-coded storage."""

from .distributions import (
    Exponential,
    ExponentialMixture,
    ShiftedExponential,
    classify,
    expected_extreme,
    parse_dist,
)
from .engine import SimConfig, Trace, average_flow_time, run_replications, simulate
from .policies import POLICY_IDS, PolicySpec, Trigger, make_policy
from .rng import Streams
from .workload import Request, WorkloadSpec, generate_requests, min_code_distance, traffic_intensity

__version__ = "0.1.0"

__all__ = [
    "Exponential",
    "ExponentialMixture",
    "POLICY_IDS",
    "PolicySpec",
    "Request",
    "ShiftedExponential",
    "SimConfig",
    "Streams",
    "Trace",
    "Trigger",
    "WorkloadSpec",
    "average_flow_time",
    "classify",
    "expected_extreme",
    "generate_requests",
    "make_policy",
    "min_code_distance",
    "parse_dist",
    "run_replications",
    "simulate",
    "traffic_intensity",
]
