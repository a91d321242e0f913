"""Deterministic simulator for decentralized federated prompt learning.

Clients train small prompt stacks against frozen encoders on private
shards, then push their shared prompt slots directly to peers chosen by
inverse-selection-frequency sampling -- no server, no gradient exchange.
The package provides the exchange protocol, a synthetic planted-context
task family to run it on, byte-level communication accounting, and a CLI
that renders reports with figures.
"""

from .core import (
    BROADCAST,
    ClientId,
    ClientState,
    CommModel,
    ConfigError,
    FederationConfig,
    PoolEntry,
    PromptSet,
    SelectionHistory,
    config_from_dict,
    config_from_profile,
    config_to_dict,
    derive_rng,
    load_config,
    validate_config,
)

__all__ = [
    "BROADCAST",
    "ClientId",
    "ClientState",
    "CommModel",
    "ConfigError",
    "FederationConfig",
    "PoolEntry",
    "PromptSet",
    "SelectionHistory",
    "config_from_dict",
    "config_from_profile",
    "config_to_dict",
    "derive_rng",
    "load_config",
    "validate_config",
]

__version__ = "0.1.0"
