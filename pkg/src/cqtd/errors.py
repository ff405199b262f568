"""Exception types shared across the package."""


class CQTDError(Exception):
    """Base class for all package errors."""


class InvalidParameterError(CQTDError, ValueError):
    pass


class InvalidInputError(CQTDError, ValueError):
    pass


class ShapeError(CQTDError, ValueError):
    pass


class StateError(CQTDError, RuntimeError):
    """Raised when an operation needs context that was never produced."""


class NonFiniteError(CQTDError, FloatingPointError):
    pass


class DivergenceError(CQTDError, RuntimeError):
    def __init__(self, step: int, message: str = ""):
        self.step = step
        super().__init__(f"training diverged at step {step}" + (f": {message}" if message else ""))


class FormatError(CQTDError, ValueError):
    """Malformed or unsupported file contents."""
