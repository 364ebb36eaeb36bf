"""Version age of information for threshold-coded updates in gossip networks."""

from .analytic import AnalyticResult, BoundPair, CriticalRateQuery, critical_gossip_rate
from .model import (
    ConfigError,
    Heterogeneous,
    Homogeneous,
    NetworkConfig,
    NetworkType,
    NodeClass,
    Scheme,
    ValidatedConfig,
    classify_network,
    homogeneous,
    validate_config,
)
from .simulator import Horizon, SimStats, Time, UpdateCount, run_replications, run_simulation

__version__ = "0.1.0"

__all__ = [
    "AnalyticResult",
    "BoundPair",
    "ConfigError",
    "CriticalRateQuery",
    "Heterogeneous",
    "Homogeneous",
    "Horizon",
    "NetworkConfig",
    "NetworkType",
    "NodeClass",
    "Scheme",
    "SimStats",
    "Time",
    "UpdateCount",
    "ValidatedConfig",
    "classify_network",
    "critical_gossip_rate",
    "homogeneous",
    "run_replications",
    "run_simulation",
    "validate_config",
]
