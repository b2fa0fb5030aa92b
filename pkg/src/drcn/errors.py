"""Exception types shared across the toolkit.

The CLI maps these onto exit codes: configuration and usage problems
exit 1, data problems exit 2, numerical failures exit 3.
"""


class DimensionError(ValueError):
    """Operands have incompatible shapes or channel counts."""


class UsageError(RuntimeError):
    """An API contract was violated, e.g. backward() on a foreign tape."""


class ConfigError(ValueError):
    """A configuration file, flag combination, or header is invalid."""


class DataError(RuntimeError):
    """Input data is missing, empty, undecodable, or corrupt."""


class NumericalError(RuntimeError):
    """Training produced a non-finite loss."""
