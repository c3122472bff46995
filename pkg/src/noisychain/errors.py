"""Exception types shared across the package."""


class ParameterError(ValueError):
    """Invalid parameter or unsupported combination of parameters."""


class UnsupportedMeasureError(ParameterError):
    """Exact Gaussian moments requested for a non-Gaussian Gibbs measure."""


class NumericError(ArithmeticError):
    """A numerical routine failed (factorization, convergence, overflow).

    ``residual`` carries the last residual norm when the failure is an
    iterative solver running out of budget.
    """

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class DegeneracyError(NumericError):
    """The spectrum of the coupling matrix is degenerate at working precision."""


class DegeneracyWarning(RuntimeWarning):
    """Emitted when an eigendecomposition contains (near-)degenerate eigenvalues."""
