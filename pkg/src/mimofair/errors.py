"""Exception hierarchy shared by the solver modules and the CLI."""


class MimoFairError(Exception):
    """Base class for all package errors."""


class InvalidInputError(MimoFairError, ValueError):
    """Raised when an argument or scenario violates a documented precondition."""


class ConfigError(MimoFairError):
    """Raised when a configuration file cannot be parsed or resolved."""


class SolverFailure(MimoFairError):
    """Raised when an iterative solver does not converge.

    The ``residual`` attribute carries the last residual reached and
    ``diagnostics`` any extra state the solver chose to attach.
    """

    def __init__(self, message, residual=float("nan"), diagnostics=None):
        super().__init__(message)
        self.residual = residual
        self.diagnostics = dict(diagnostics or {})
