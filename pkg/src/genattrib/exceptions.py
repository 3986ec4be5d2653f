"""Exception hierarchy.

Every error raised on purpose by this package derives from
:class:`GenAttribError`; the CLI maps the three families below to exit
codes.
"""


class GenAttribError(Exception):
    """Base class for all package errors."""


# -- usage / configuration -------------------------------------------------

class UsageError(GenAttribError, ValueError):
    """A precondition on arguments was violated."""


class ShapeError(UsageError):
    """Array or tensor dimensions do not match."""


class ConfigError(UsageError):
    """Invalid or unknown configuration key/value."""


# -- data / files ----------------------------------------------------------

class DataError(GenAttribError):
    """Problem with an input file or dataset."""


class FormatError(DataError):
    """Wrong magic number or malformed header."""


class LengthError(DataError):
    """File is empty or its payload is truncated."""


class ConsistencyError(DataError):
    """Two related files disagree (e.g. image/label counts)."""


class VersionError(DataError):
    """Unknown weight-file format version."""


class ChecksumError(DataError):
    """Stored checksum does not match the payload."""


class TruncationError(LengthError):
    """Weight file ends before the declared payload."""


# -- numerics --------------------------------------------------------------

class NumericError(GenAttribError, ArithmeticError):
    """A non-finite value appeared where a finite one is required."""


class TrainingError(NumericError):
    """Training diverged."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class OptimizationFailure(NumericError):
    """Every restart of a multi-start run was non-finite at its start."""

    def __init__(self, message, traces=()):
        super().__init__(message)
        self.traces = list(traces)


class InversionFailure(OptimizationFailure):
    """Inversion of a generator against a probe failed for all restarts."""


class AttributionError(NumericError):
    """No candidate generator produced a usable inversion."""
