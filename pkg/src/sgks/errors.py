"""Exception taxonomy shared across the toolkit.

Every error raised by the library derives from SgksError so callers (and the
CLI exit-code mapping) can distinguish usage, validation, and numerical
failures without string matching.
"""

from __future__ import annotations


class SgksError(Exception):
    """Base class for all toolkit errors."""


class UsageError(SgksError):
    """Bad invocation: missing flags, unreadable paths, malformed CLI input."""


class ValidationError(SgksError):
    """Data or configuration violates a documented invariant."""


class FormatError(ValidationError):
    """A trace file does not follow the SGKT layout (magic, version, flags)."""


class TruncationError(FormatError):
    """A trace file ends before its declared payload does."""

    def __init__(self, expected: int, actual: int, what: str = "file"):
        self.expected = expected
        self.actual = actual
        super().__init__(
            f"truncated {what}: expected {expected} bytes, got {actual}"
        )


class DegenerateInputError(ValidationError):
    """Structurally empty input where mass is required (all-zero attention)."""


class DegenerateSignalError(ValidationError):
    """A signal with zero total energy; downstream ratios are undefined."""


class WindowError(ValidationError):
    """A requested layer window is not covered by the trace(s) at hand."""


class ConfigurationError(ValidationError):
    """A config object is self-inconsistent or unsatisfiable for the data."""


class SizeError(ValidationError):
    """Dimension mismatch or sample too small for the requested estimator."""


class CalibrationError(SgksError):
    """Calibration cannot proceed (e.g., too few decisive hold-out points)."""


class NumericalError(SgksError):
    """An underlying numerical routine failed to converge or returned junk."""


class EpisodeError(SgksError):
    """A gate episode could not be completed (retrieval failed, no usable
    candidates)."""
