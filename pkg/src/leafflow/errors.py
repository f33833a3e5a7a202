"""Exception hierarchy shared by all modules.

The CLI maps these onto stable exit codes: config problems exit 2,
convergence failures exit 3, domain excursions exit 4.
"""


class LeafflowError(Exception):
    """Base class for all package errors."""


class ConfigError(LeafflowError):
    """Invalid or incomplete configuration."""


class DomainError(LeafflowError):
    """A chart point lies outside the model's admissible domain."""


class ExcursionError(DomainError):
    """An integration step left the admissible domain.

    Carries the last valid state in ``last_state`` when available.
    """

    def __init__(self, message, last_state=None):
        super().__init__(message)
        self.last_state = last_state


class FoldingError(DomainError):
    """Folding into the fundamental polygon did not terminate."""


class ScaleError(DomainError):
    """Inputs violate a small-scale precondition (e.g. Sasaki proximity)."""


class ConvergenceError(LeafflowError):
    """An iterative solve failed to reach its tolerance.

    ``residual`` carries the best residual seen before giving up.
    """

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class BlowupError(ConvergenceError):
    """A Riccati solution blew up (conjugate-point crossing of a bad seed).

    ``time`` is the integration time at which the threshold was exceeded.
    """

    def __init__(self, message, time=None):
        super().__init__(message)
        self.time = time
