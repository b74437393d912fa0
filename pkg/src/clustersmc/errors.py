"""Exception hierarchy shared across the simulator."""

from __future__ import annotations


class SimulatorError(Exception):
    """Base class for every error raised by this package."""


class UsageError(SimulatorError, ValueError):
    """A caller passed arguments that violate an operation's preconditions."""


class ShapeError(UsageError):
    """Weight vectors of incompatible dimension were combined."""


class ArithmeticDomainError(SimulatorError, ArithmeticError):
    """A non-finite value appeared where only finite reals are allowed."""


class ConfigError(UsageError):
    """An experiment configuration failed validation.

    ``field`` names the offending configuration entry so front ends can
    report it.
    """

    def __init__(self, field: str, message: str) -> None:
        super().__init__(f"{field}: {message}")
        self.field = field


class ProtocolError(SimulatorError):
    """A protocol run observed a missing, duplicated or misrouted message."""


class LogParseError(SimulatorError, ValueError):
    """A serialized message log record could not be decoded."""

    def __init__(self, lineno: int, message: str) -> None:
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno
