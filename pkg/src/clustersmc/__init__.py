"""Deterministic federated-learning simulator with cluster-based secure aggregation."""

from .errors import (
    ArithmeticDomainError,
    ConfigError,
    LogParseError,
    ProtocolError,
    ShapeError,
    SimulatorError,
    UsageError,
)
from .protocol import RunConfig, run_training

__all__ = [
    "ArithmeticDomainError",
    "ConfigError",
    "LogParseError",
    "ProtocolError",
    "RunConfig",
    "ShapeError",
    "SimulatorError",
    "UsageError",
    "run_training",
]

__version__ = "0.1.0"
