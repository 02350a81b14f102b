"""Exception hierarchy shared across the package.

Numerical failures (factorizations hitting degenerate input) and data
failures (bad files, mismatched shapes) are kept on separate branches so the
CLI can map them to distinct exit codes.
"""


class SomdError(Exception):
    """Base class for all package errors."""


class ValidationError(SomdError):
    """Bad configuration or flag combination, detected before any work."""


class NumericalError(SomdError):
    """A dense kernel met input it cannot factor."""


class RankDeficient(NumericalError):
    """QR input is (numerically) column-rank deficient."""


class NotSymmetric(NumericalError):
    """Matrix expected symmetric violates the symmetry tolerance."""


class NotPositiveDefinite(NumericalError):
    """Cholesky pivot <= 0; regularization was insufficient."""


class DimensionMismatch(NumericalError):
    """Operand shapes are incompatible."""


class DataError(SomdError):
    """Bad input data (files, tensors, masks)."""


class InsufficientSamples(DataError):
    """Fewer training samples than the estimator needs."""


class ModelMismatch(DataError):
    """Test features are incompatible with the fitted model."""


class CorruptModel(DataError):
    """Model file fails magic/version/checksum validation."""


class UnsupportedDtype(DataError):
    """Tensor file dtype is not little-endian float32."""


class UnsupportedOrder(DataError):
    """Tensor file is not C-contiguous (column-major rejected)."""


class MalformedHeader(DataError):
    """Tensor file header cannot be parsed."""


class ShapeMismatch(DataError):
    """Tensor shape disagrees with its manifest declaration."""


class NoAnomalousRegion(DataError):
    """Ground-truth masks contain no anomalous pixel."""


class NoNormalPixel(DataError):
    """Ground-truth masks contain no normal pixel."""


class SingleClass(DataError):
    """Only one class present; ROC-AUC undefined."""


class PairingError(DataError):
    """Score files and mask files cannot be paired one-to-one."""


class IoError(DataError):
    """Underlying file I/O failed (unreadable or unwritable path)."""
