"""Discrete-event simulator of a shared burst buffer."""
from .config import MB, Scenario, SimConfig, WorkloadSpec, config_from_doc, load_scenario, scenario_from_doc
from .engine import Simulation, Trace, handle_sync, simulate
from .metrics import Metrics, collect_metrics, run, write_summary_csv, write_windows_csv

__all__ = [
    "MB", "Metrics", "Scenario", "SimConfig", "Simulation", "Trace", "WorkloadSpec",
    "collect_metrics", "config_from_doc", "handle_sync", "load_scenario", "run",
    "scenario_from_doc", "simulate", "write_summary_csv", "write_windows_csv",
]
