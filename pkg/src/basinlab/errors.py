"""Exception types shared across the package."""

from __future__ import annotations


class Error(Exception):
    """Base class for all package errors."""


class InvalidParameter(Error):
    """A value is outside the domain of the operation that received it."""

    def __init__(self, field: str, reason: str):
        self.field = field
        self.reason = reason
        super().__init__(f"{field}: {reason}")


class EmptyOthers(Error):
    """The aggregate signal needs at least one other player's action."""


class NotSPE(Error):
    """Joint cooperation is not an equilibrium at these parameters."""


class Infeasible(Error):
    """No parameter value attains the requested design target."""


class ConfigError(Error):
    """A configuration file or run configuration is invalid."""


class SchemaError(ConfigError):
    """A data file violates its schema; names the offending row/column."""

    def __init__(self, message: str, *, row: int | None = None, column: str | None = None):
        self.row = row
        self.column = column
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column!r}")
        suffix = f" ({', '.join(where)})" if where else ""
        super().__init__(message + suffix)


class EmptyWindow(Error):
    """The requested metric window selects no supergames."""


class LengthCapExceeded(Error):
    """A drawn supergame length exceeded the hard round cap."""


class EstimationError(Error):
    """Base class for maximum-likelihood estimation failures."""


class Separation(EstimationError):
    """The likelihood has no finite maximizer (perfect separation)."""


class NotConverged(EstimationError):
    """The optimizer hit the iteration cap before the gradient tolerance."""


class TooFewClusters(EstimationError):
    """Cluster-robust inference needs at least two clusters."""


class MissingCell(EstimationError):
    """The treatment-cell decomposition needs all four design cells."""
