"""Exception types shared across the package."""


class InvalidArgumentError(ValueError):
    """An argument violates a documented precondition (shape, sign, range)."""


class InvalidCoefficientError(InvalidArgumentError):
    """A PDE coefficient evaluates outside its admissible range at a quadrature point."""


class SolverFailureError(RuntimeError):
    """An iterative linear solver did not reach its tolerance within the iteration budget."""

    def __init__(self, message, iterations=None, residual=None):
        super().__init__(message)
        self.iterations = iterations
        self.residual = residual


class DegenerateOperatorError(RuntimeError):
    """The elliptic part is singular (no positive coercivity constant exists)."""


class ConfigError(ValueError):
    """An experiment configuration file is malformed or inconsistent."""
