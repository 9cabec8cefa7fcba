"""Exception types shared across the package."""


class SpinDDError(Exception):
    pass


class ValidationError(SpinDDError, ValueError):
    """Input data violates a structural requirement (shape, hermiticity, ...)."""


class ParameterError(SpinDDError, ValueError):
    """A model or physical parameter is outside its admissible range."""


class DomainError(SpinDDError, ValueError):
    """A functional was evaluated outside its domain (e.g. nonpositive density)."""


class StepFailure(SpinDDError, RuntimeError):
    """A time step could not be completed.

    ``report`` carries the last :class:`~spindd.transport.StepReport` when one
    is available.
    """

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class ConvergenceError(SpinDDError, RuntimeError):
    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = list(history or [])


class FitError(SpinDDError, ValueError):
    pass


class ConfigError(SpinDDError, ValueError):
    pass
