"""Exception hierarchy shared by all diffuse modules."""


class DiffuseError(Exception):
    """Base class for all errors raised by this package."""


class DataError(DiffuseError, ValueError):
    """Input data is malformed: non-finite entries, misaligned shapes, bad files."""


class ParameterError(DiffuseError, ValueError):
    """A hyperparameter or configuration value is outside its admissible range."""


class NumericalError(DiffuseError, ArithmeticError):
    """A decomposition or solve failed to converge."""


class RankError(DiffuseError, ArithmeticError):
    """The requested number of factors exceeds the numerical rank of the panel."""


class SingularDesignError(DiffuseError, ArithmeticError):
    """A least squares design is rank deficient.

    Raised for a projected design ``X @ R`` without full column rank, a
    rank-deficient always-included block ``W``, or when the retry budget for
    regenerating singular random projections is exhausted.
    """

    def __init__(self, message, retries=0):
        super().__init__(message)
        self.retries = retries
