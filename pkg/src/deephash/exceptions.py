"""Exception types shared across the package."""


class DeepHashError(Exception):
    """Base class for all package errors."""


class FormatError(DeepHashError, ValueError):
    """A file on disk does not match its declared format."""


class BadMagicError(FormatError):
    pass


class TruncatedError(FormatError):
    pass


class ShapeMismatchError(DeepHashError, ValueError):
    """Array or parameter shapes disagree."""


class ConfigError(DeepHashError, ValueError):
    """Invalid configuration or specification values."""


class DivergenceError(DeepHashError, FloatingPointError):
    """Training produced a non-finite loss, gradient or parameter.

    Attributes:
        epoch: epoch at which the problem was detected.
        batch: batch index within the epoch, or None.
    """

    def __init__(self, message, epoch=None, batch=None):
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch
