"""Exception hierarchy shared across the toolkit.

Validation problems (bad configs, infeasible geometry) and numerical
failures (singular information matrices, non-converged solvers) are kept
distinct so the CLI can map them to different exit codes.
"""


class RiscoopError(Exception):
    """Base class for all toolkit errors."""


class ValidationError(RiscoopError):
    """A configuration or input violates a stated precondition."""


class NumericalError(RiscoopError):
    """A numerical routine failed (singularity, non-convergence, ...)."""


class UnidentifiableStateError(NumericalError):
    """The state Fisher information matrix is rank deficient."""


class ConvergenceError(NumericalError):
    """An iterative solver hit its iteration cap.

    Carries the best iterate found so far in ``best``.
    """

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best
