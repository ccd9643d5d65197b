"""Exception hierarchy shared across the package."""


class QBLIFError(Exception):
    """Base class for all package errors."""


class DimensionError(QBLIFError, ValueError):
    """Tensor shapes do not line up."""


class InvalidScaleError(QBLIFError, ValueError):
    """A quantization scale is not strictly positive (or not finite)."""


class NumericFaultError(QBLIFError, FloatingPointError):
    """NaN or infinity appeared in a membrane potential or gradient."""


class ConfigError(QBLIFError, ValueError):
    """Invalid network spec or experiment config."""


class InvariantViolation(QBLIFError, RuntimeError):
    """An internal invariant was broken (e.g. burst level out of range)."""


class FormatError(QBLIFError, ValueError):
    """A data or model file is malformed."""


class ChecksumError(FormatError):
    """Stored checksum does not match the payload."""


class UnsupportedVersionError(FormatError):
    """File was written by an unsupported container version."""
