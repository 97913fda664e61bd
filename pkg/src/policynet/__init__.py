"""Robust affine policies for networks of coupled linear systems."""

from .model import (AgentSpec, ConfigError, DesignConfig, Mode, NetworkSpec, Topology,
                    classify_topology, load_config, precedent_set, validate)
from .uncertainty import Polyhedron, box, simplex

__version__ = "0.1.0"

__all__ = [
    "AgentSpec", "ConfigError", "DesignConfig", "Mode", "NetworkSpec", "Polyhedron",
    "Topology", "box", "classify_topology", "load_config", "precedent_set", "simplex",
    "validate",
]
