"""Deterministic discrete-event simulator for GossipSub large-message dissemination."""

from .config import ConfigError, load_config
from .metrics import (
    average_duplicates,
    coverage_latency,
    duplicate_bounds,
    iwant_reply_share,
    round_model,
    temporal_spread,
    total_bandwidth,
)
from .protocol import AdversaryKind, MeshParams, ProtocolParams, Variant
from .scenario import Network, ScenarioConfig, TransportParams, run

__version__ = "0.1.0"

__all__ = [
    "AdversaryKind",
    "ConfigError",
    "MeshParams",
    "Network",
    "ProtocolParams",
    "ScenarioConfig",
    "TransportParams",
    "Variant",
    "average_duplicates",
    "coverage_latency",
    "duplicate_bounds",
    "iwant_reply_share",
    "load_config",
    "round_model",
    "run",
    "temporal_spread",
    "total_bandwidth",
]
