"""Discrete-event simulator for migratable storage actors on a CXL-attached SSD."""

from .actor import Descriptor, Placement, RequestClass, StageKind, StorageActor
from .engine import InvariantViolation, RunResult, Simulation, inject_fault, migrate_actor, run_scenario
from .metrics import EventLog, Metrics, collect_metrics
from .scenario import Scenario, ScenarioError, dumps_scenario, loads_scenario, parse_scenario

__all__ = [
    "Descriptor", "Placement", "RequestClass", "StageKind", "StorageActor",
    "InvariantViolation", "RunResult", "Simulation", "inject_fault", "migrate_actor", "run_scenario",
    "EventLog", "Metrics", "collect_metrics",
    "Scenario", "ScenarioError", "dumps_scenario", "loads_scenario", "parse_scenario",
]
