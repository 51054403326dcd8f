"""Exception hierarchy shared by the library and the ``lab`` CLI."""


class LabError(Exception):
    """Base class for all library errors."""


class DomainError(LabError, ValueError):
    """An argument lies outside the domain of the requested quantity."""


class ConfigurationError(LabError, ValueError):
    """Inconsistent or unsupported configuration."""


class EvaluationError(LabError, ArithmeticError):
    """A function produced a non-finite value where a finite one was required."""


class SolverError(LabError, RuntimeError):
    """An iterative solver failed to reach its tolerance.

    Parameters
    ----------
    message : str
        Human readable description.
    residual : float, optional
        Last residual norm seen by the solver.
    """

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class InfeasibleError(SolverError):
    """The robust max-margin problem has no feasible point."""


class DivergenceError(SolverError):
    """An iterative method blew up (loss increased beyond its guard)."""
