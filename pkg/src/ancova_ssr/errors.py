"""Exception types shared across the package."""


class AncovaSSRError(Exception):
    """Base class for all errors raised by ancova_ssr."""


class DomainError(AncovaSSRError, ValueError):
    """An argument lies outside the domain of the function."""


class FeasibilityError(AncovaSSRError):
    """A nuisance-parameter specification cannot describe a real population
    (non-PSD covariance, R^2 >= 1, or a design too small for its covariates)."""


class DegeneracyError(AncovaSSRError):
    """A covariance or design matrix is singular or rank deficient."""


class UndersizedError(AncovaSSRError):
    """Too few observations for the residual degrees of freedom to be positive."""


class SearchError(AncovaSSRError):
    """An iterative sample-size search left its admissible range."""


class ConfigurationError(AncovaSSRError):
    """A simulation scenario or batch record is malformed."""


class BlindingError(AncovaSSRError):
    """Group labels were supplied where blinded data is required."""
