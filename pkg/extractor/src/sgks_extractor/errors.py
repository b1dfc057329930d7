"""Error taxonomy for the extractor.

Kept deliberately small; the CLI maps these onto exit codes (UsageError -> 1,
everything else -> 2).
"""


class ExtractorError(Exception):
    """Base class for everything this package raises on purpose."""


class UsageError(ExtractorError):
    """Malformed command-line input."""


class ConfigurationError(ExtractorError):
    """An extraction job that cannot be run as specified."""


class CapabilityError(ExtractorError):
    """The model cannot expose what capture needs (attention weights)."""


class ExtractionError(ExtractorError):
    """A forward pass or serialization failed at runtime."""


class ManifestError(ExtractorError):
    """Manifest construction failed (duplicate or empty prompt ids)."""
