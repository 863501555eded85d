"""Exception types raised by the package."""

import numpy as np


class UGPError(Exception):
    """Base class for all package errors."""


class ConfigError(UGPError, ValueError):
    """Invalid configuration value or unknown configuration key."""


class DomainError(UGPError, ValueError):
    """A location or distribution falls outside the region where it is defined."""


class NonPSDError(UGPError, np.linalg.LinAlgError):
    """A covariance matrix could not be factorized, even after jitter."""


class UnsupportedKernelError(UGPError, ValueError):
    """The requested kernel exponent has no closed form for this operation."""


class DegreeTooHighError(UGPError, ValueError):
    """Polynomial degree outside the supported (well-conditioned) range."""


class DegenerateDataError(UGPError, ValueError):
    """Training data carries no variance left to explain."""


class RankError(UGPError, np.linalg.LinAlgError):
    """A least-squares regressor is rank deficient."""
