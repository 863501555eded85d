"""Posterior prediction for the classical, uncertain-input and Monte Carlo GPs."""

from __future__ import annotations

import warnings

import numpy as np
from scipy.linalg import solve_triangular

from .field import Locations
from .kernels import gram_classical, gram_expected, mean_classical, mean_expected
from .linalg import chol_solve, jitter_cholesky
from .model import LearnedModel, Posterior, TrainingSet

#: Relative size below which a negative predictive variance is plain round-off.
VARIANCE_CLAMP_RTOL = 1e-8
#: ``N * M`` above which Monte Carlo prediction warns about its cost.
MCGP_COST_BUDGET = 200_000


def _clamp_variance(var, prior):
    if np.any(var < -VARIANCE_CLAMP_RTOL * prior):
        warnings.warn(
            f"predictive variance {float(np.min(var)):.3g} is negative beyond round-off; clamped to 0",
            RuntimeWarning,
            stacklevel=3,
        )
    return np.maximum(var, 0.0)


class _Conditioner:
    """Cholesky factor of the training covariance and the weights ``K^-1 (y - mu)``."""

    def __init__(self, K, resid):
        self.L, _ = jitter_cholesky(K)
        self.beta = chol_solve(self.L, resid)

    def __call__(self, k_star, mu_star, prior):
        mean = mu_star + k_star.T @ self.beta
        v = solve_triangular(self.L, k_star, lower=True, check_finite=False)
        var = prior - np.sum(v * v, axis=0)
        return mean, var


def _prior_variance(theta):
    return theta.sigma_psi**2 + theta.sigma_proc**2


def _classical_conditioner(theta, Z, y):
    K = gram_classical(Z, theta)
    K[np.diag_indices_from(K)] += theta.sigma_n**2
    return _Conditioner(K, y - mean_classical(Z, theta))


def predict_cgp(model: LearnedModel, data: TrainingSet, x_star) -> Posterior:
    """Classical GP posterior at exact test locations.

    Training inputs enter through their reported means only; uncertain test
    inputs are likewise replaced by their means.  The prior variance at a
    test point includes ``sigma_proc**2`` but not the measurement noise.
    """
    theta = model.theta
    X = Locations.coerce(x_star).z
    cond = _classical_conditioner(theta, data.z, data.y)
    prior = _prior_variance(theta)
    mean, var = cond(gram_classical(data.z, theta, X), mean_classical(X, theta), prior)
    return Posterior(mean, _clamp_variance(var, prior))


def predict_ugp(model: LearnedModel, data: TrainingSet, u_star) -> Posterior:
    """Uncertain-input GP posterior using the expected mean and kernel.

    Both training and test beliefs are consumed in full.  Test inputs are
    always treated as distinct from training inputs.
    """
    theta = model.theta
    U = data.inputs
    Us = Locations.coerce(u_star)
    K = gram_expected(U, theta)
    K[np.diag_indices_from(K)] += theta.sigma_n**2
    cond = _Conditioner(K, data.y - mean_expected(U, theta))
    prior = _prior_variance(theta)
    mean, var = cond(gram_expected(U, theta, Us), mean_expected(Us, theta), prior)
    return Posterior(mean, _clamp_variance(var, prior))


def predict_mcgp(model: LearnedModel, data: TrainingSet, u_star, M=300, rng=None,
                 cost_budget=MCGP_COST_BUDGET) -> Posterior:
    """Monte Carlo GP posterior: classical predictions averaged over location samples.

    Each of the ``M`` samples draws every training location and every test
    location from its belief and runs :func:`predict_cgp` on them.  The
    returned variance is the average within-sample variance plus the
    spread of the sample means.  With exact training inputs the training
    covariance is factorized once; with every input exact the result is
    exactly the classical posterior.
    """
    theta = model.theta
    U = data.inputs
    Us = Locations.coerce(u_star)
    if U.is_exact and Us.is_exact:
        return predict_cgp(model, data, Us)
    rng = np.random.default_rng(rng)
    prior = _prior_variance(theta)
    n, T = len(U), len(Us)
    if U.is_exact:
        X_star = Us.sample(rng, size=M).reshape(M * T, Us.dim)
        cond = _classical_conditioner(theta, U.z, data.y)
        means, variances = cond(gram_classical(U.z, theta, X_star), mean_classical(X_star, theta), prior)
        means, variances = means.reshape(M, T), variances.reshape(M, T)
    else:
        if n * M > cost_budget:
            warnings.warn(
                f"Monte Carlo prediction needs {M} factorizations of a {n}x{n} covariance",
                RuntimeWarning,
                stacklevel=2,
            )
        X_train = U.sample(rng, size=M)
        X_star = Us.sample(rng, size=M)
        means = np.empty((M, T))
        variances = np.empty((M, T))
        for m in range(M):
            cond = _classical_conditioner(theta, X_train[m], data.y)
            means[m], variances[m] = cond(
                gram_classical(X_train[m], theta, X_star[m]), mean_classical(X_star[m], theta), prior
            )
    variances = _clamp_variance(variances, prior)
    var = variances.mean(axis=0) + means.var(axis=0)
    return Posterior(means.mean(axis=0), var)
