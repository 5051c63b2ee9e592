"""
Exception types raised by the streaming RL engine.
Argument problems stay ValueError subclasses so callers can keep catching ValueError.
"""

from typing import Any, Dict, Optional


class InvalidArgumentError(ValueError):
    """Raised for out-of-range arguments, bad sizes or unknown names."""


class NonFiniteInputError(ValueError):
    """Raised when an observation, reward or network input is NaN or infinite."""


class NonFiniteUpdateError(FloatingPointError):
    """
    Raised when a TD error, loss or gradient becomes non-finite.

    The harness aborts the run on this error and writes a diagnostic checkpoint.
    """

    def __init__(self, message: str, diagnostics: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class ContractViolation(RuntimeError):
    """Raised when an internal precondition is broken (stale tape, layout mismatch, ...)."""


class IncompatibleCheckpointError(ValueError):
    """Raised when a checkpoint cannot be loaded into the requested architecture."""


class ChecksumError(ValueError):
    """Raised when a checkpoint file is truncated or corrupt."""


class CheckpointVersionError(ValueError):
    """Raised when a checkpoint was written with an unknown format version."""
