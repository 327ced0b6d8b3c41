"""Exception hierarchy shared by every module.

The CLI maps the three families below onto process exit codes:
``ConfigError`` -> 2, ``NumericalError`` -> 3, ``InputOutputError`` -> 4.
"""


class GPRegError(Exception):
    """Base class for all package errors."""


class ConfigError(GPRegError, ValueError):
    """Invalid configuration or argument value."""


class NumericalError(GPRegError, ArithmeticError):
    """A numerical stage failed (factorization, optimization, degeneracy)."""


class InputOutputError(GPRegError, OSError):
    """Reading or writing a file failed."""


class ParseError(InputOutputError):
    def __init__(self, path, line_number, line):
        self.path = str(path)
        self.line_number = line_number
        self.line = line
        super().__init__(f"{path}:{line_number}: cannot parse {line!r} as 'x y z'")


class EmptyInputError(ConfigError):
    """An operation received an empty point set."""


class ParameterDomainError(ConfigError):
    """A parameter lies outside its mathematical domain."""


class BoundsError(ConfigError):
    """A parameter vector violates its box constraints."""


class IndefiniteCovarianceError(NumericalError):
    def __init__(self, pivot, message=None):
        self.pivot = int(pivot)
        super().__init__(message or f"covariance matrix is not positive definite (leading minor {self.pivot})")


class DegenerateWindowError(ConfigError):
    """The requested window grid cannot be laid over the bounding box."""


class EmptyFieldError(NumericalError):
    """Every window was skipped or failed; no local estimates exist."""


class FieldError(NumericalError):
    """Too few local estimates to build a transformation field."""


class RankDeficiencyError(NumericalError):
    """Thin-plate spline knots are collinear."""


class UndefinedMetricError(NumericalError):
    """A metric normalizer is zero."""


class CapExceededError(ConfigError):
    """Dense simulation requested above the supported size."""
