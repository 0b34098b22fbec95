"""Exception types shared across the package."""


class PreconditionError(ValueError):
    """An input violates a documented precondition (e.g. non-unit direction)."""


class DegenerateEdgeError(ValueError):
    """An edge has zero length, so its direction is undefined."""


class ConfigurationError(ValueError):
    """A layer or model was configured inconsistently."""


class XYZParseError(ValueError):
    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


class RelaxationError(RuntimeError):
    """Relaxation aborted; ``trace`` holds the steps completed so far."""

    def __init__(self, message: str, trace=None):
        super().__init__(message)
        self.trace = trace
