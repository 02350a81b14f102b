"""Exception hierarchy for the extractor.

Mirrors the consumer package's split between configuration problems (exit 2)
and data problems (exit 3) without importing it; the two packages share file
formats only.
"""


class ExtractError(Exception):
    """Base class for all extractor errors."""


class ValidationError(ExtractError):
    """Bad configuration or flag combination, detected before any work."""


class DataError(ExtractError):
    """Bad input data (dataset layout, files, weights)."""


class DatasetError(DataError):
    """Dataset tree is missing, empty, or not laid out as expected."""


class MissingWeights(DataError):
    """Pretrained weights are neither cached nor downloadable."""


class UndecodableImage(DataError):
    """An image file cannot be decoded; callers skip and record it."""


class IoError(DataError):
    """Underlying file I/O failed (unreadable or unwritable path)."""
