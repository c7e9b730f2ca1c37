"""Round-based simulator for a solar-powered water-quality sensor network.

Clustered routing with equalized cluster-head rotation (ECHERP) or LEACH,
first-order radio energy, solar harvesting into an accumulator, random
node failure and the sensor-node acquisition loop.
"""

from .engine import Metrics, RoundRecord, Simulation, compare, read_metrics_csv, simulate, write_metrics_csv
from .model import ScenarioConfig, ScenarioError, generate_topology, load_scenario, serialize_scenario, validate_scenario

__all__ = [
    "Metrics", "RoundRecord", "ScenarioConfig", "ScenarioError", "Simulation", "compare",
    "generate_topology", "load_scenario", "read_metrics_csv", "serialize_scenario", "simulate",
    "validate_scenario", "write_metrics_csv",
]
__version__ = "0.1.0"
