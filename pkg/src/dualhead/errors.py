"""Exception hierarchy; the CLI maps these to exit codes."""


class DualHeadError(Exception):
    """Base class for all package errors."""


class DimensionError(DualHeadError, ValueError):
    """Operand shapes are incompatible."""


class ConfigError(DualHeadError, ValueError):
    """A configuration value is out of its accepted range."""


class UsageError(DualHeadError, RuntimeError):
    """An API was called in an unsupported way."""


class GraphError(DualHeadError, ValueError):
    """A skeleton graph or parent map is malformed."""


class AlignmentError(DualHeadError, ValueError):
    """A frame count is not divisible by the subsampling rate."""


class FormatError(DualHeadError, ValueError):
    """A file could not be parsed.  ``offset`` is the byte offset, when known."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class UnsupportedVersionError(FormatError):
    pass


class NumericError(DualHeadError, ArithmeticError):
    """A non-finite value appeared during training."""
