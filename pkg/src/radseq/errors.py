"""Exception hierarchy shared by all radseq modules.

The CLI maps ``ValidationError`` (and subclasses) to exit code 1 and
``DataError`` (and subclasses) to exit code 2.
"""


class RadseqError(Exception):
    """Base class for every error raised by the package."""


class ValidationError(RadseqError, ValueError):
    """Bad arguments, inconsistent specs, bad config or manifest content."""


class DimensionError(ValidationError):
    """Tensor shapes do not agree with what a kernel expects."""


class ParseError(ValidationError):
    """A text input (manifest, config) could not be parsed."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class UndefinedMetricError(ValidationError):
    """A rate was requested whose denominator is zero."""


class DataError(RadseqError):
    """Runtime data problem: unreadable file, corrupt image, bad checkpoint."""


class DecodeError(DataError):
    def __init__(self, path, offset, message):
        self.path = str(path)
        self.offset = offset
        super().__init__(f"{path}: byte {offset}: {message}")
