"""Discrete-time simulation and optimal control of mixed signal/stop networks.

Subpackages:
    network    scenario parsing, link partitioning, capacities
    signaldyn  signalized-link speed levels and flow rules
    fcfs       all-way-stop arrival indicators and virtual green
    engine     the two-rate stepper and delay accounting
    milp       exact transcription, simplex, branch and bound, file formats
"""

from .network import NetworkModel, ScenarioConfig, ScenarioError, parse_scenario, serialize_scenario, link_capacity
from .engine import Simulator, SignalPlan, run_scenario, total_delay

__version__ = "0.1.0"

__all__ = [
    "NetworkModel", "ScenarioConfig", "ScenarioError", "parse_scenario",
    "serialize_scenario", "link_capacity", "Simulator", "SignalPlan",
    "run_scenario", "total_delay", "__version__",
]
