"""Exception taxonomy shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2,
CompatibilityError -> 3, DataError -> 4.
"""


class DfarError(Exception):
    """Base class for all package errors."""


class DimensionError(DfarError):
    """Shapes do not satisfy an operation's contract."""


class NumericError(DfarError):
    """Non-finite values where finite ones are required (e.g. NaN logits)."""


class ContractError(DfarError):
    """An API precondition was violated (e.g. backward on a non-scalar)."""


class ConfigError(DfarError):
    """Invalid configuration value or combination."""


class DataError(DfarError):
    """Malformed or unusable input data."""


class CompatibilityError(DfarError):
    """Checkpoint and dataset/config do not match."""
