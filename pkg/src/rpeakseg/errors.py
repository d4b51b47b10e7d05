"""Exception types shared across the package.

Each maps onto a CLI exit code (see ``rpeakseg.cli``).
"""


class RPeakError(Exception):
    """Base class for all package errors."""


class FormatError(RPeakError):
    """Malformed input file (bad line, truncated payload, bad weights file)."""


class ConfigError(RPeakError):
    """Invalid or missing configuration value."""


class DataError(RPeakError):
    """Input data violates a precondition (non-finite values, too short, ...)."""


class ShapeError(RPeakError, ValueError):
    """Array shapes inconsistent with a layer's declared geometry."""


class NumericError(RPeakError):
    """Training diverged (NaN/inf loss)."""
