"""Exception hierarchy shared by the estimation services.

``ConfigError`` subclasses describe bad input (CLI exit code 2, HTTP 400);
``EstimationError`` subclasses describe numerical failures (CLI exit code 1,
HTTP 422).
"""


class AsfError(Exception):
    """Base class for every error raised by the package."""


class ConfigError(AsfError, ValueError):
    """Invalid configuration or input data."""


class EstimationError(AsfError, RuntimeError):
    """A numerical step could not produce an estimate."""


# -- input / configuration -------------------------------------------------

class MissingColumn(ConfigError):
    def __init__(self, role):
        self.role = role
        super().__init__(f"MissingColumn({role!r}): no column with role prefix '{role}'")


class EmptyAfterFiltering(ConfigError):
    pass


class UnparsableCell(ConfigError):
    def __init__(self, row, column, value):
        self.row = row
        self.column = column
        self.value = value
        super().__init__(f"UnparsableCell at row {row}, column {column!r}: {value!r}")


class DimensionMismatch(ConfigError):
    pass


class InfeasibleWindow(ConfigError):
    def __init__(self, message, lower=None, upper=None):
        self.lower = lower
        self.upper = upper
        super().__init__(message)


# -- numerical ---------------------------------------------------------------

class InsufficientLocalData(EstimationError):
    def __init__(self, message, indices=()):
        self.indices = list(indices)
        super().__init__(message)


class SingularDesign(EstimationError):
    pass


class DegreeTooLow(EstimationError):
    pass


class NonConvergence(EstimationError):
    pass


class RankDeficientDesign(EstimationError):
    pass


class NoObservationsAtLevel(EstimationError):
    pass


class EmptyTrim(EstimationError):
    pass


class SingularSecondMoment(EstimationError):
    def __init__(self, condition_number):
        self.condition_number = condition_number
        super().__init__(
            f"second-moment matrix is numerically singular (condition number {condition_number:.3e})"
        )


class EmptyNeighborhood(EstimationError):
    pass


class ZeroDenominator(EstimationError):
    def __init__(self, message, indices=()):
        self.indices = list(indices)
        super().__init__(message)


class QuadratureNonConvergence(EstimationError):
    pass


class ReplicationFailure(EstimationError):
    pass
