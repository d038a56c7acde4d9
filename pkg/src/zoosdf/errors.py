"""Exception taxonomy shared by all modules.

Exit-code mapping used by the CLI: usage/config errors -> 1,
data errors -> 2, numerical failures -> 3.
"""


class ZooSdfError(Exception):
    """Base class for all package errors."""


class ConfigError(ZooSdfError):
    """Invalid configuration or unusable option combination."""


class DataError(ZooSdfError):
    """Malformed or inconsistent input data."""


class AlignmentError(DataError):
    """Date rows of two input files do not line up."""


class SchemaError(DataError):
    """Structural problem: duplicate names, missing columns, bad metadata."""


class DegenerateColumnError(DataError):
    """A column has zero variance where dispersion is required."""


class DimensionError(DataError):
    """Array shapes do not conform."""


class InsufficientDataError(DataError):
    """Too few observations for the requested computation."""


class NumericalError(ZooSdfError):
    """Numerical failure during estimation."""


class SingularityError(NumericalError):
    """A matrix that must be invertible is (numerically) singular."""

    def __init__(self, message: str, condition_number: float | None = None):
        if condition_number is not None:
            message = f"{message} (condition number ~{condition_number:.3e})"
        super().__init__(message)
        self.condition_number = condition_number


class CalibrationError(NumericalError):
    """Hyperparameter calibration has no solution for the requested target."""


class DegeneratePosteriorError(NumericalError):
    """A conditional posterior is degenerate (e.g. zero inverse-Gamma rate)."""


class DegenerateFitError(NumericalError):
    """A model fit collapsed (constant input, no improvement over trivial fit)."""
