"""Exception types raised by the estimation pipeline."""


class PoetError(Exception):
    """Base class for all package errors."""


class NonFiniteError(PoetError, ValueError):
    """Input matrix or panel contains NaN or infinite entries."""


class SingularMatrixError(PoetError, ArithmeticError):
    """A matrix that must be positive definite is not.

    Attributes
    ----------
    lambda_min : float
        Smallest eigenvalue found.
    """

    def __init__(self, message, lambda_min):
        super().__init__(f"{message} (lambda_min={lambda_min:.6g})")
        self.lambda_min = float(lambda_min)


class SingularIdiosyncraticError(SingularMatrixError):
    """Thresholded idiosyncratic covariance is not invertible.

    Raised by the Woodbury step. ``C`` is the threshold constant that
    produced the matrix; choose a constant above ``c_min`` instead.
    """

    def __init__(self, lambda_min, C):
        msg = (f"thresholded idiosyncratic covariance is singular at C={C!r}; "
               "pick C above the value returned by c_min")
        super().__init__(msg, lambda_min)
        self.C = C


class NonStationaryError(PoetError, ValueError):
    """VAR(1) coefficient matrix has spectral radius >= 1."""

    def __init__(self, radius):
        super().__init__(f"VAR(1) is not stationary: spectral radius {radius:.6g} >= 1")
        self.radius = float(radius)


class DegenerateObjectiveError(PoetError, ArithmeticError):
    """Minimum-variance problem has 1' S^-1 1 too close to zero."""


class PanelParseError(PoetError, ValueError):
    """CSV panel could not be parsed.

    ``row`` and ``col`` are 1-based positions in the file (header is row 1).
    """

    def __init__(self, message, row=None, col=None):
        loc = ""
        if row is not None:
            loc = f" at row {row}" + (f", column {col}" if col is not None else "")
        super().__init__(message + loc)
        self.row = row
        self.col = col


class BoundViolation(PoetError, AssertionError):
    """A deterministic inequality that must hold was violated."""
