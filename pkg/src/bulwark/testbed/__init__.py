"""Simulated multi-party web applications: OAuth 2.0 explicit-mode login
and PayPal-style checkout with instant payment notifications, plus the
attack scripts and the scenario runner used as the deployment-search
verification oracle."""

from .scenarios import Scenario, VULN_FLAGS, scenario_from_dict
from .runner import RunReport, ScenarioRuntime, oracle_verify, run_scenario, testbed_verifier

__all__ = [
    "Scenario",
    "VULN_FLAGS",
    "scenario_from_dict",
    "RunReport",
    "ScenarioRuntime",
    "run_scenario",
    "oracle_verify",
    "testbed_verifier",
]
