"""Exception and warning types raised across the package."""


class EdrlMeaError(Exception):
    """Base class for all package errors."""


class ValidationError(EdrlMeaError, ValueError):
    pass


class InvalidCell(ValidationError):
    pass


class DimensionMismatch(ValidationError):
    pass


class DuplicateId(ValidationError):
    pass


class TooFewRows(ValidationError):
    pass


class SingleClass(ValidationError):
    pass


class UnsupportedCategory(ValidationError):
    pass


class NonFiniteValue(ValidationError):
    pass


class NonFiniteGradient(EdrlMeaError, FloatingPointError):
    pass


class InvalidEpsilon(ValidationError):
    pass


class MissingCache(EdrlMeaError, RuntimeError):
    pass


class EmptyPartition(ValidationError):
    pass


class UnsupportedChannels(ValidationError):
    pass


class UnsupportedEncoding(ValidationError):
    pass


class EmptyAudio(ValidationError):
    pass


class SilentSignal(ValidationError):
    pass


class SampleRateMismatch(ValidationError):
    pass


class MissingSnrLevel(ValidationError):
    pass


class KeyMismatch(ValidationError):
    pass


class StageOrder(EdrlMeaError, RuntimeError):
    """A pipeline stage was run before the stage it depends on."""


class ConfigError(ValidationError):
    pass


class NumericalWarning(UserWarning):
    """Emitted when a value was clamped or a degenerate case was hit."""
