"""Exception hierarchy.

Every input, shape or config problem raises an ``EvRobustError`` subclass; the
CLI maps these to exit code 1 and ``InvariantFailure`` to exit code 2.
None of them subclass ValueError, so they pass through pydantic validators
unwrapped.
"""
from __future__ import annotations


class EvRobustError(Exception):
    """Base class for validation-type failures (exit code 1)."""


class DegenerateSpanError(EvRobustError):
    pass


class EventParseError(EvRobustError):
    def __init__(self, line_no: int, message: str):
        self.line_no = line_no
        super().__init__(f"line {line_no}: {message}")


class EventValidationError(EvRobustError):
    pass


class ShapeMismatchError(EvRobustError):
    pass


class ConfigError(EvRobustError):
    pass


class DatasetError(EvRobustError):
    pass


class PairingError(DatasetError):
    pass


class GridMismatchError(EvRobustError):
    pass


class ImageError(EvRobustError):
    pass


class WeightsError(EvRobustError):
    pass


class InvariantFailure(Exception):
    """A configured statistical invariant did not hold (exit code 2)."""

    def __init__(self, message: str, failing: list[str] | None = None):
        self.failing = list(failing or [])
        super().__init__(message)
