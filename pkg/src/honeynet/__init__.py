"""Simulated cloud datacenter with double-honeypot polymorphic worm collection."""

from .cloud_model import Topology
from .collection_db import CollectionDB, CollectionRecord
from .harness import MetricsReport, emit_report, run_scenario
from .introspection import AnomalyReport, BaselineProfile, build_baseline, check, extract_payload
from .orchestrator import InspectionPolicy, IntrospectionController
from .scenario import ScenarioConfig, ScenarioError, load_scenario, scenario_path, shipped_scenarios
from .vm_state import TemplateSpec
from .worm_engine import Payload, WormEngine, WormSpec, mutate_payload

__all__ = [
    "AnomalyReport",
    "BaselineProfile",
    "CollectionDB",
    "CollectionRecord",
    "InspectionPolicy",
    "IntrospectionController",
    "MetricsReport",
    "Payload",
    "ScenarioConfig",
    "ScenarioError",
    "TemplateSpec",
    "Topology",
    "WormEngine",
    "WormSpec",
    "build_baseline",
    "check",
    "emit_report",
    "extract_payload",
    "load_scenario",
    "mutate_payload",
    "run_scenario",
    "scenario_path",
    "shipped_scenarios",
]

__version__ = "0.1.0"
