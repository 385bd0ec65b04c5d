"""Exception types shared across the package."""


class MteqError(Exception):
    """Base class for all package errors."""


class InvalidLength(MteqError):
    """A sequence has the wrong length for the requested operation."""


class DegenerateInput(MteqError):
    """Input is all-zero or otherwise carries no usable signal."""


class ShapeError(MteqError):
    """Array shapes are inconsistent with the model/operation contract."""


class StateError(MteqError):
    """An operation was called before its required state was prepared."""


class NumericsError(MteqError):
    """Non-finite values were encountered where finite ones are required."""


class FormatError(MteqError):
    """A serialized file is corrupt, truncated, or of an unsupported version."""


class ConfigError(MteqError):
    """A configuration value is invalid; the message names the field path."""


class QUndefined(MteqError):
    """Q-factor is undefined for BER >= 0.5."""
