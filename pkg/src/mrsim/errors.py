"""Exception hierarchy shared across the package."""


class MrsimError(Exception):
    """Base class for all package errors."""


class ValidationError(MrsimError, ValueError):
    """Invalid geometry, configuration, or operation preconditions."""


class RangeError(ValidationError):
    """Argument outside the documented evaluation range."""


class EvaluationOverflow(MrsimError, ArithmeticError):
    """Result magnitude not representable in float64.

    Raised instead of returning silent infinities or zeros; the scaled
    evaluation entry points avoid this by carrying explicit exponents.
    """


class ConvergenceError(MrsimError, RuntimeError):
    """An iterative scheme failed to converge.

    Carries a ``trace`` attribute with diagnostic data describing the
    search or iteration history.
    """

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace if trace is not None else []
