"""Exception hierarchy shared by the library and the CLI exit-code mapping."""


class OpenSetError(Exception):
    """Base class for all errors raised by :mod:`openset_al`."""


class DataError(OpenSetError, ValueError):
    """Malformed or inconsistent embedding data (CLI exit code 2)."""


class DimensionMismatchError(DataError):
    pass


class ConfigError(OpenSetError, ValueError):
    """Invalid experiment configuration or usage (CLI exit code 1)."""


class OracleError(OpenSetError, LookupError):
    """The label oracle refused a query (unknown or already consumed id)."""


class InvariantViolation(OpenSetError, RuntimeError):
    """An internal invariant did not hold (CLI exit code 3)."""
