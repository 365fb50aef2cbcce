"""Exception hierarchy shared by every stage of the suspension pipeline."""


class SuspensionError(Exception):
    """Base class for all errors raised by :mod:`hamsuspend`."""


class UnsupportedOrderError(SuspensionError, ValueError):
    pass


class WrongProfileError(SuspensionError, ValueError):
    pass


class ResolutionError(SuspensionError, ValueError):
    """The sampling grid cannot resolve the requested derivative order."""


class NoConvergenceError(SuspensionError, RuntimeError):
    def __init__(self, message, residual_norm=float("nan")):
        super().__init__(f"{message} (last residual norm {residual_norm:.3e})")
        self.residual_norm = residual_norm


class ContractionError(SuspensionError, RuntimeError):
    """An implicit generating-function relation could not be solved.

    Raised when the generator is too large for the fixed-point relations to
    be contractions (measured C^1 size of the gradient >= 1/2) or when a
    Newton solve inside an isotopy evaluator fails.
    """


class InvalidMapError(SuspensionError, ValueError):
    pass


class QuadratureError(SuspensionError, RuntimeError):
    pass


class StiffnessError(SuspensionError, RuntimeError):
    pass


class DomainExitError(SuspensionError, RuntimeError):
    """A trajectory left the flowbox chart.

    ``trajectory`` holds the samples up to (and including) the exit state
    when the integrator could build them; ``indices`` lists the offending
    members of a batched integration.
    """

    def __init__(self, message, t_exit=None, state=None, indices=None, trajectory=None):
        super().__init__(message)
        self.t_exit = t_exit
        self.state = state
        self.indices = indices
        self.trajectory = trajectory


class ConfigError(SuspensionError, ValueError):
    pass


class StageError(SuspensionError):
    """Wraps an error with the pipeline stage and operation that produced it."""

    def __init__(self, stage, operation, cause):
        super().__init__(f"[{stage}/{operation}] {type(cause).__name__}: {cause}")
        self.stage = stage
        self.operation = operation
        self.cause = cause
