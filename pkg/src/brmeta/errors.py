"""Exception types raised by brmeta."""


class BrmetaError(Exception):
    """Base class for all package errors."""


class DomainError(BrmetaError, ValueError):
    """An argument lies outside the domain where a quantity is defined."""


class RankDeficiencyError(BrmetaError, ValueError):
    """The design matrix (or X^T W X) is not of full column rank."""


class InvalidMethodError(BrmetaError, ValueError):
    """The estimation method is not valid for the requested operation."""


class ConfigurationError(BrmetaError, ValueError):
    """Invalid solver options or simulation design."""


class InsufficientDataError(BrmetaError, ValueError):
    """Too few studies for the number of fixed effects."""


class ProfileError(BrmetaError, RuntimeError):
    """A constrained maximisation used by a profile statistic failed.

    Attributes
    ----------
    residual_score : float
        Largest absolute adjusted score component at the last iterate.
    """

    def __init__(self, message, residual_score=float("nan")):
        super().__init__(message)
        self.residual_score = residual_score
