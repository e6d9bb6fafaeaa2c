"""Exception and warning types raised across the package.

Errors are grouped by the exit code the CLI maps them to: data problems (2),
numerical failures (3) and configuration mistakes (4).
"""


class SparseTrackError(Exception):
    """Base class for all package errors."""


# -- data ------------------------------------------------------------------


class DataError(SparseTrackError):
    """Malformed or inconsistent input data."""


class MissingCell(DataError):
    def __init__(self, row, column):
        self.row = row
        self.column = column
        super().__init__(f"missing value at row {row!r}, column {column!r}")


class NonPositivePrice(DataError):
    pass


class DuplicateTicker(DataError):
    pass


class UnsortedDates(DataError):
    pass


class WindowOutOfRange(DataError):
    pass


class DimensionMismatch(DataError, ValueError):
    pass


# -- numerics --------------------------------------------------------------


class NumericalError(SparseTrackError):
    """A computation could not produce a usable result."""


class DegenerateColumn(NumericalError):
    pass


class NumericalFailure(NumericalError):
    pass


class NonFiniteState(NumericalError):
    pass


class NonFiniteObjective(NumericalError):
    pass


class SingularSystem(NumericalError):
    pass


class ZeroDiagonal(NumericalError):
    pass


class DegenerateReference(NumericalError):
    pass


class TooFewDraws(NumericalError):
    pass


class ConstantSeries(NumericalError):
    pass


class EmptyTail(NumericalError):
    pass


class EmptySupport(NumericalError):
    pass


class AllNaN(NumericalError):
    pass


# -- configuration ---------------------------------------------------------


class ConfigError(SparseTrackError, ValueError):
    pass


# -- warnings --------------------------------------------------------------


class SparseTrackWarning(UserWarning):
    """Base class for non-fatal diagnostics."""


class ConvergenceWarning(SparseTrackWarning):
    """An iterative routine hit its iteration cap before its tolerance."""


class ClippingWarning(SparseTrackWarning):
    """Most SAPG updates were projected back onto the admissible box."""


class TuneExhausted(SparseTrackWarning):
    pass


class ZeroVarianceWarning(SparseTrackWarning):
    pass


class EmptySupportWarning(SparseTrackWarning):
    pass


class GateDegenerate(SparseTrackWarning):
    pass


class BudgetShiftWarning(SparseTrackWarning):
    pass
