"""Error taxonomy shared by the library, the service, and the CLI.

Every failure surfaced to a caller falls in one of three buckets so the
CLI can map it to a stable exit code and the service to a structured
JSON error body.
"""


class TpvoccError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 1
    kind = "internal"


class ConfigError(TpvoccError):
    """Invalid configuration: bad values, missing referenced paths."""

    exit_code = 2
    kind = "config"


class DataError(TpvoccError):
    """Invalid or inconsistent data: shape mismatches, bad files."""

    exit_code = 3
    kind = "data"


class NumericError(TpvoccError):
    """Numerical failure: non-finite values detected mid-computation."""

    exit_code = 4
    kind = "numeric"
