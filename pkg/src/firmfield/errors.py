"""Exception types raised by the solvers."""


class DomainError(ValueError):
    """An argument lies outside the domain where the quantity is defined."""


class ConvergenceError(RuntimeError):
    """An iterative procedure failed to reach its tolerance."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class BoxViolationError(ConvergenceError):
    """A price iterate or minimizer reached the boundary of the admissible price box."""


class InternalSolverError(RuntimeError):
    """A trajectory left its admissible region; indicates an integrator defect."""


class ValidationError(ValueError):
    """A scenario configuration is malformed."""
