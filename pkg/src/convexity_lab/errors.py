"""Exception hierarchy and warnings."""


class ConvexityLabError(Exception):
    pass


class InvalidInputError(ConvexityLabError, ValueError):
    pass


class ResourceError(ConvexityLabError):
    pass


class NotCriticalError(ConvexityLabError):
    pass


class DivergenceError(ConvexityLabError):
    """Raised when a trajectory blows up; carries the partial record."""

    def __init__(self, message, record=None):
        super().__init__(message)
        self.record = record


class MonotonicityError(ConvexityLabError):
    """Gradient-flow loss increased beyond integrator tolerance."""

    def __init__(self, message, record=None, suggested_step=None):
        super().__init__(message)
        self.record = record
        self.suggested_step = suggested_step


class ParseError(ConvexityLabError, ValueError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class FormatError(ConvexityLabError, ValueError):
    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"byte offset {offset}: {message}"
        super().__init__(message)
        self.offset = offset


class BoundaryWarning(UserWarning):
    """A pre-activation sits on (or within tolerance of) a ReLU kink."""
