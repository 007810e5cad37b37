"""Scenario-driven simulation harness: runner, invariant checks, attacks."""

from .attacks import ATTACKS, SCRIPTS
from .checks import run_checks
from .runner import RunReport, load_trace, run_scenario, save_trace
from .scenario import FAMILIES, ScenarioError, validate

__all__ = [
    "ATTACKS",
    "SCRIPTS",
    "FAMILIES",
    "RunReport",
    "ScenarioError",
    "load_trace",
    "run_checks",
    "run_scenario",
    "save_trace",
    "validate",
]
