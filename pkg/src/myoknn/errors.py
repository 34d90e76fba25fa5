"""Exception types shared across the pipeline."""


class MyoError(Exception):
    """Base class for data and model errors (CLI exit code 1)."""


class ConfigurationError(MyoError, ValueError):
    """A parameter is outside its valid range."""


class StructuralError(MyoError, ValueError):
    """Shapes or channel counts do not line up."""


class ParseError(MyoError, ValueError):
    """A CSV or model file is malformed."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class NumericalError(MyoError, ArithmeticError):
    """A matrix is singular or a computation is ill-conditioned."""


class ModelFitError(MyoError, ValueError):
    """Training data cannot support the requested model."""
