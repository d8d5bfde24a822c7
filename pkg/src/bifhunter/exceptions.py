"""Exception hierarchy shared across the package."""

import numpy as np


class BifhunterError(Exception):
    """Base class for all errors raised by bifhunter."""


class DimensionError(BifhunterError, ValueError):
    pass


class DomainError(BifhunterError, ValueError):
    """An evaluation point lies outside the admissible domain of a system."""


class NonFiniteError(BifhunterError, FloatingPointError):
    def __init__(self, message, component=None):
        super().__init__(message)
        self.component = component


class NotFittedError(BifhunterError, AttributeError):
    pass


class FitError(BifhunterError):
    """Raised for degenerate training data or an unrecoverable factorization."""

    def __init__(self, message, condition=None):
        super().__init__(message)
        self.condition = condition


class NewtonFailure(BifhunterError):
    """Newton iteration did not converge.

    Carries the last iterate and its residual so callers can fall back.
    """

    def __init__(self, message, last_iterate=None, residual=np.inf):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.residual = residual


class SingularJacobian(BifhunterError):
    def __init__(self, message, condition=np.inf):
        super().__init__(message)
        self.condition = condition


class DefectiveEigen(BifhunterError):
    pass


class AllNewtonFailed(BifhunterError):
    pass


class McDegenerate(BifhunterError):
    def __init__(self, message, failure_fraction=1.0):
        super().__init__(message)
        self.failure_fraction = failure_fraction


class RunFailure(BifhunterError):
    """A BO run hit an unrecoverable numeric failure; ``trace`` holds the partial record."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class ConfigError(BifhunterError, ValueError):
    pass
