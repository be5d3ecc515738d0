"""Discrete-event simulator of QoS-driven user-node interaction in DAG-based ledgers."""

__version__ = "0.1.0"

from .model import ConfigError, NetworkConfig, Policy, Scenario, generate_reputation, load_config  # noqa: E402
from .engine import SimResult, Simulation, run, run_scenario  # noqa: E402

__all__ = [
    "ConfigError",
    "NetworkConfig",
    "Policy",
    "Scenario",
    "SimResult",
    "Simulation",
    "generate_reputation",
    "load_config",
    "run",
    "run_scenario",
]
