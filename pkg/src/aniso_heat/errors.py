"""Exception hierarchy shared by all modules."""

from __future__ import annotations

__all__ = [
    "AnisoHeatError",
    "ValidationError",
    "DegenerateMeasureError",
    "GridTooCoarseError",
    "OutOfRangeError",
    "ConvergenceError",
    "PVNotStabilizedError",
]


class AnisoHeatError(Exception):
    """Base class for all toolkit errors."""


class ValidationError(AnisoHeatError, ValueError):
    """Invalid input: malformed measure, config entry, or argument."""


class DegenerateMeasureError(ValidationError):
    """Spectral measure is supported in a proper subspace (ellipticity fails)."""


class GridTooCoarseError(ValidationError):
    """Spatial grid does not resolve the symbol's decay.

    Parameters
    ----------
    message : str
        Human readable explanation.
    required_n : int
        Smallest power-of-two point count that passes the resolution guard.
    """

    def __init__(self, message: str, required_n: int):
        super().__init__(message)
        self.required_n = required_n


class OutOfRangeError(AnisoHeatError, ValueError):
    """Evaluation point lies outside the trusted part of a grid."""


class ConvergenceError(AnisoHeatError, RuntimeError):
    """A numerical procedure failed to converge."""


class PVNotStabilizedError(ConvergenceError):
    """Principal-value ladder did not stabilize.

    Attributes
    ----------
    diagnostics : dict
        Ladder differences and ratios that triggered the failure.
    """

    def __init__(self, message: str, diagnostics: dict):
        super().__init__(message)
        self.diagnostics = diagnostics
