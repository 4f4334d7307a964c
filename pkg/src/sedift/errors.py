"""Exception types shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, DataError -> 3,
NumericError (and ContractViolation) -> 4.
"""


class SediftError(Exception):
    """Base class for all package errors."""


class ConfigError(SediftError):
    """Invalid or inconsistent configuration."""


class DataError(SediftError):
    """Missing, malformed, or unreadable data artifacts."""


class MissingHistoryError(DataError):
    """Weather source cannot cover the requested 72-hour window."""


class CheckpointError(DataError):
    """Checkpoint file is corrupt, truncated, or version-incompatible."""


class NumericError(SediftError):
    """Numeric failure: divergence, non-finite values, degenerate geometry."""


class ContractViolation(NumericError):
    """A caller violated an operation's documented precondition."""


def require(condition: bool, message: str) -> None:
    """Raise ContractViolation with `message` unless `condition` holds."""
    if not condition:
        raise ContractViolation(message)
