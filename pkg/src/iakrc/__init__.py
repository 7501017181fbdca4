"""Interference-aware K-step reachable grouping for multi-agent grid worlds."""

from .config import ConfigError, Params
from .world import ScenarioError, WorldState, load_scenario, parse_scenario, step_world

__all__ = ["ConfigError", "Params", "ScenarioError", "WorldState", "load_scenario", "parse_scenario", "step_world"]
__version__ = "0.1.0"
