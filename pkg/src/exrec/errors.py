"""Exception hierarchy shared across the package."""


class ExrecError(Exception):
    """Base class for all package errors."""


class ShapeError(ExrecError):
    """Operand shapes are incompatible."""


class NumericError(ExrecError):
    """A computation produced or received non-finite values."""


class InputError(ExrecError):
    """Caller-supplied data violates an operation's preconditions."""


class StateError(ExrecError):
    """An object is in the wrong state for the requested operation."""


class ConfigError(ExrecError):
    """A configuration is inconsistent or references missing resources."""


class ConvergenceError(ExrecError):
    """An iterative fit failed to converge; carries the iteration trace."""

    def __init__(self, message: str, trace: list | None = None):
        super().__init__(message)
        self.trace = trace or []


class ParseError(ExrecError):
    """A data file could not be parsed; carries the offending line number."""

    def __init__(self, message: str, line_number: int | None = None):
        super().__init__(message)
        self.line_number = line_number
