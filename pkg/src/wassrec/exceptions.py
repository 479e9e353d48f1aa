"""Exception types shared across the package."""


class DataError(ValueError):
    """Raised when an input file or table violates the data contract."""


class SolverError(RuntimeError):
    """Raised when an iterative solver fails for a reason other than iteration budget."""


class ConvergenceError(SolverError):
    """Raised when an iterative solver exhausts its budget before reaching tolerance.

    Attributes
    ----------
    iterations : int
        Number of iterations performed.
    violation : float
        Final residual (marginal violation for matrix scaling, gradient
        norm for first-order solvers).
    """

    def __init__(self, message, iterations=None, violation=None):
        super().__init__(message)
        self.iterations = iterations
        self.violation = violation


class RankDeficiencyError(SolverError):
    """Raised when a factor matrix loses full rank and a dual solve is ill-posed.

    Attributes
    ----------
    factor : str
        Which factor is deficient ("dictionary" or "loadings").
    rank : int
        Observed numerical rank.
    required : int
        Rank needed for the solve.
    """

    def __init__(self, factor, rank, required):
        super().__init__(
            "%s matrix is rank deficient: rank %d < %d" % (factor, rank, required)
        )
        self.factor = factor
        self.rank = rank
        self.required = required
