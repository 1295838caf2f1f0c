"""Exception hierarchy shared by the estimators and the benchmark harness."""


class EnlargedError(Exception):
    """Base class for all errors raised by this package."""


class ModelSingularError(EnlargedError):
    """A covariance matrix is singular or collapsed during fitting."""


class DegenerateScoreError(EnlargedError):
    """Every sample sits at numerical density zero, so the score carries no information."""


class ScaleDegenerateError(EnlargedError):
    """The regression noise scale hit its floor (perfect interpolation)."""


class DesignSingularError(EnlargedError):
    """The regression design matrix (with intercept) is rank deficient."""


class InvalidTrimError(EnlargedError):
    """The LTS coverage h is smaller than the number of coefficients."""


class ConfigError(EnlargedError):
    """Malformed experiment configuration."""


class DataError(EnlargedError):
    """Input data is missing, malformed or contains non-finite values."""
