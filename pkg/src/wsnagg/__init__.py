"""Secure distributed max aggregation for wireless sensor networks.

Covariance-intersection fusion, bounded-Gaussian local fusion, a per-node
protocol with challenge-based detection of lying nodes, and a seeded
discrete-event simulator to run it all.
"""

from .estimate import Estimate, FusionError, ci_fuse, ci_fuse_optimal, ci_optimal_omega
from .fusion import FusionConfig, Gaussian1D, fuse_local, fuse_local_min, truncated_moments
from .protocol import Node, ProtocolConfig, Verdict
from .simulator import AttackConfig, ConfigError, ScenarioConfig, Simulation, run
from .config import parse_config

__all__ = [
    "Estimate", "FusionError", "ci_fuse", "ci_fuse_optimal", "ci_optimal_omega",
    "FusionConfig", "Gaussian1D", "fuse_local", "fuse_local_min", "truncated_moments",
    "Node", "ProtocolConfig", "Verdict",
    "AttackConfig", "ConfigError", "ScenarioConfig", "Simulation", "run",
    "parse_config",
]
