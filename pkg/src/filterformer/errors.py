"""Exception hierarchy. ``exit_code`` is what the command-line front end returns."""


class FilterformerError(Exception):
    exit_code = 1


class ConfigError(FilterformerError):
    exit_code = 2


class InvalidPathError(FilterformerError, ValueError):
    exit_code = 2


class DimensionError(FilterformerError, ValueError):
    exit_code = 2


class InvalidCovarianceError(FilterformerError, ValueError):
    exit_code = 2


class NumericalError(FilterformerError, ArithmeticError):
    exit_code = 3


class DivergenceError(NumericalError):
    """A simulated state or a training loss became non-finite."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class RiccatiBlowupError(NumericalError):
    """The filter covariance lost positive-definiteness."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class AssumptionViolation(NumericalError):
    """A coefficient evaluation broke a pointwise structural bound (e.g. singular ``BoB``)."""


class RetryBudgetExhausted(NumericalError):
    pass


class DatasetIOError(FilterformerError, OSError):
    exit_code = 4
