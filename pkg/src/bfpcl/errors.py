"""Exception types raised across the package."""


class BfpError(Exception):
    """Base class for package errors."""


class InvalidInputError(BfpError, ValueError):
    """An argument violates a documented precondition."""


class InvalidStateError(BfpError, RuntimeError):
    """An object was used out of order, e.g. a stale forward cache."""


class NumericalError(BfpError, ArithmeticError):
    """A numerical routine failed to converge."""

    def __init__(self, message, iterations=None):
        super().__init__(message)
        self.iterations = iterations


class FormatError(BfpError, ValueError):
    """A file does not follow its binary or text format."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class EmptyBufferError(BfpError, LookupError):
    """Sampling was requested from a buffer that holds no examples."""


class UndefinedMetricError(BfpError, ValueError):
    """A metric is undefined for the given accuracy matrix (e.g. FF with one task)."""


class DivergedRunError(BfpError, RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, message, step):
        super().__init__(f"{message} (step {step})")
        self.step = step


class ConfigError(BfpError, ValueError):
    """Experiment configuration could not be parsed or validated."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
