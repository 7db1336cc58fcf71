"""Exception types raised across the package."""


class FracInvError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(FracInvError, ValueError):
    """An argument violates a documented precondition."""


class IncompatibleDataError(FracInvError):
    """Neumann data fails the zero-mean compatibility condition."""

    def __init__(self, message, defect):
        super().__init__(message)
        self.defect = defect


class SingularSystemError(FracInvError):
    """A linear system could not be factorized."""


class DegenerateDataError(FracInvError):
    """Data carry no information about the sought parameter."""


class DegenerateFitError(FracInvError):
    """A rational fit could not be computed."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class PoleEvaluationError(FracInvError, ZeroDivisionError):
    """A rational function was evaluated at (numerically) a pole."""


class ConfigError(FracInvError, ValueError):
    """A scenario configuration is malformed; ``path`` names the field."""

    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = path


class ObjectiveNaNError(FracInvError, FloatingPointError):
    """The recovery objective became NaN; ``state`` holds the last iterate."""

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state
