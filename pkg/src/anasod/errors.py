"""Exception hierarchy shared by the package."""

from __future__ import annotations


class AnasodError(Exception):
    """Base class for all package errors."""


class InvalidInputError(AnasodError, ValueError):
    pass


class InvalidConfigurationError(AnasodError, ValueError):
    """An integer encoding that cannot be realized as a cell (sum != N)."""


class CapacityError(AnasodError, OverflowError):
    pass


class WiringSampleError(AnasodError, RuntimeError):
    """Rejection sampling of a valid wiring ran out of retries."""


class NotFoundError(AnasodError, KeyError):
    def __str__(self) -> str:  # KeyError quotes its message otherwise
        return str(self.args[0]) if self.args else ""


class ParseError(AnasodError, ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class CalibrationError(AnasodError, RuntimeError):
    def __init__(self, message: str, achieved: tuple[float, float, float] | None = None):
        self.achieved = achieved
        if achieved is not None:
            message = (
                f"{message} (achieved overall={achieved[0]:.4g}, "
                f"same_encoding={achieved[1]:.4g}, seed={achieved[2]:.4g})"
            )
        super().__init__(message)


class UnsupportedError(AnasodError, NotImplementedError):
    pass


class InvalidTargetError(AnasodError, ValueError):
    pass


class NumericalError(AnasodError, ArithmeticError):
    pass


class StepSizeError(AnasodError, ArithmeticError):
    """Mirror step kept collapsing the iterate even after shrinking the step."""


class DivergenceError(AnasodError, RuntimeError):
    def __init__(self, message: str, encoding=None, history=None):
        super().__init__(message)
        self.encoding = encoding
        self.history = history if history is not None else []


class SearchError(AnasodError, RuntimeError):
    """An oracle failure inside a search loop, tagged with the step it happened at."""

    def __init__(self, message: str, step: int):
        super().__init__(f"step {step}: {message}")
        self.step = step


class ConfigError(AnasodError, ValueError):
    def __init__(self, field: str, reason: str):
        super().__init__(f"{field}: {reason}")
        self.field = field
        self.reason = reason
