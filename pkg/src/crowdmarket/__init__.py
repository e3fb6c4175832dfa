"""Adversarially robust crowd-sourced spatial data market.

Protocol library (verification, voting, consensus, valuation, market) plus a
Monte-Carlo attack-simulation harness and CLI.
"""

from .core import (
    Agent,
    AgentId,
    QuadrantId,
    ScenarioConfig,
    SeededRng,
    SpatialCoalition,
    build_population,
    derive_trial_rng,
    sample_measurement,
    sample_reputation,
)
from .errors import (
    ConfigError,
    CrowdMarketError,
    IntegrityError,
    MarketError,
    SolverError,
)

__version__ = "0.1.0"

__all__ = [
    "Agent",
    "AgentId",
    "QuadrantId",
    "ScenarioConfig",
    "SeededRng",
    "SpatialCoalition",
    "build_population",
    "derive_trial_rng",
    "sample_measurement",
    "sample_reputation",
    "ConfigError",
    "CrowdMarketError",
    "IntegrityError",
    "MarketError",
    "SolverError",
    "__version__",
]
