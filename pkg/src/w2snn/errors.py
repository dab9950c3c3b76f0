"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Array shapes do not conform."""


class ConfigError(ValueError):
    """A configuration value or combination is invalid."""


class NumericalError(ArithmeticError):
    """A computation produced non-finite values and was aborted."""


class EvaluationError(NumericalError):
    """A user-supplied function returned a non-finite value."""


class InconclusiveStudy(RuntimeError):
    """A Monte Carlo study could not separate signal from its noise floor."""
