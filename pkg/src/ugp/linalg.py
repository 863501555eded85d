"""Dense symmetric positive (semi)definite helpers."""

import logging

import numpy as np
from scipy import linalg

from .exceptions import NonPSDError

logger = logging.getLogger(__name__)

#: Relative jitter levels tried in order after a plain factorization fails.
JITTER_LEVELS = (1e-10, 1e-9, 1e-8, 1e-7, 1e-6)


def jitter_cholesky(K, scale=None):
    """Lower Cholesky factor of ``K``, adding diagonal jitter on failure.

    Jitter is ``eps * scale`` with ``eps`` escalating through
    :data:`JITTER_LEVELS`; ``scale`` defaults to the mean diagonal entry.

    Returns
    -------
    L : ndarray
        Lower triangular factor of ``K + eps * scale * I``.
    jitter : float
        The absolute jitter that was added (0.0 when none was needed).
    """
    K = np.asarray(K, dtype=float)
    if not np.all(np.isfinite(K)):
        raise NonPSDError("covariance matrix has non-finite entries")
    try:
        return linalg.cholesky(K, lower=True, check_finite=False), 0.0
    except linalg.LinAlgError:
        pass
    if scale is None:
        scale = float(np.mean(np.diag(K)))
    scale = abs(scale) if scale else 1.0
    eye = np.eye(K.shape[0])
    for eps in JITTER_LEVELS:
        try:
            L = linalg.cholesky(K + eps * scale * eye, lower=True, check_finite=False)
        except linalg.LinAlgError:
            continue
        logger.debug("added jitter %.1e to a %dx%d covariance", eps * scale, *K.shape)
        return L, eps * scale
    raise NonPSDError(
        f"covariance not positive definite after jitter {JITTER_LEVELS[-1]:g} x {scale:g}"
    )


def chol_solve(L, b):
    """Solve ``(L L^T) x = b`` given the lower factor ``L``."""
    return linalg.cho_solve((L, True), b, check_finite=False)


def chol_logdet(L):
    return 2.0 * float(np.sum(np.log(np.diag(L))))
