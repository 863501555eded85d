"""Hyperparameter learning for the classical, uncertain-input, Gaussian-approximation
and Monte Carlo GP variants.

``sigma_n`` and ``L0`` are known and never estimated.  The path-loss
exponent comes from ordinary least squares; the remaining parameters from
the marginal likelihood of the residuals.  For the grid-searched variants
the noise-free shadowing variance ``sigma_psi**2`` and the process noise
``sigma_proc**2`` share the residual variance that is left after removing
``sigma_n**2`` (the variance budget), which removes one search dimension.
"""

from __future__ import annotations

import logging

import numpy as np
from scipy import optimize
from scipy.linalg import solve_triangular
from scipy.special import logsumexp

from .exceptions import DegenerateDataError, RankError
from .field import FieldConfig, generate_shadowing_field
from .kernels import (
    MIN_DISTANCE,
    Hyperparameters,
    correlation_classical,
    correlation_expected,
    log10_distance_moments_batch,
)
from .linalg import chol_logdet, chol_solve, jitter_cholesky
from .model import LearnedModel, TrainingSet, make_training_set

logger = logging.getLogger(__name__)

D_C_GRID = np.logspace(np.log10(0.5), np.log10(60.0), 60)
N_SIGMA_GRID = 40
#: Without the budget constraint the shadowing std is searched on (0, 2 sigma_tot].
N_SIGMA_GRID_FREE = 80
MCGP_MAX_ITER = 500
MCGP_RTOL = 1e-4


def _log10_distance(z):
    return np.log10(np.maximum(np.linalg.norm(z, axis=-1), MIN_DISTANCE))


def estimate_eta_ls(data: TrainingSet, L0, kind="classical"):
    """Least-squares path-loss exponent and the residuals it leaves.

    The regressor is ``h_i = -10 log10 |z_i|`` (``kind="classical"``) or
    ``h_i = -10 E[log10 |x_i|]`` under the location belief
    (``kind="expected"``).

    Returns
    -------
    eta_hat : float
    residuals : ndarray
        ``y - L0 - h * eta_hat``.
    """
    if kind == "classical":
        h = -10.0 * _log10_distance(data.z)
    elif kind == "expected":
        h = -10.0 * log10_distance_moments_batch(data.inputs)[0]
    else:
        raise ValueError(f"unknown regressor kind {kind!r}")
    hh = float(h @ h)
    if hh == 0.0:
        raise RankError("path-loss regressor is identically zero")
    b = data.y - L0
    eta = float(h @ b) / hh
    return eta, b - h * eta


def nll(residuals, K):
    """``log|K| + r^T K^{-1} r`` via a Cholesky factor (constants dropped)."""
    L, _ = jitter_cholesky(K)
    r = np.asarray(residuals, dtype=float)
    return chol_logdet(L) + float(r @ chol_solve(L, r))


def _spectral_grid_nll(resid, corr, sigma_psi, sigma_proc, sigma_n):
    """NLL of ``sigma_psi**2 R + (sigma_proc**2 + sigma_n**2) I`` for many pairs.

    One eigendecomposition of the correlation ``R`` serves every candidate
    pair, since the covariance shares its eigenvectors.
    """
    lam, V = np.linalg.eigh(corr)
    lam = np.clip(lam, 0.0, None)
    proj2 = (V.T @ resid) ** 2
    ev = sigma_psi[:, None] ** 2 * lam[None, :] + (sigma_proc**2 + sigma_n**2)[:, None]
    return np.sum(np.log(ev), axis=1) + np.sum(proj2[None, :] / ev, axis=1)


def _grid_search(resid, corr_fn, sigma_psi, sigma_proc, sigma_n, d_c_grid=D_C_GRID):
    surface = np.array([_spectral_grid_nll(resid, corr_fn(d), sigma_psi, sigma_proc, sigma_n) for d in d_c_grid])
    i, j = np.unravel_index(np.argmin(surface), surface.shape)
    diag = {"d_c_grid": d_c_grid, "sigma_psi_grid": sigma_psi, "sigma_proc_grid": sigma_proc,
            "nll": surface, "on_boundary": i in (0, len(d_c_grid) - 1)}
    return float(d_c_grid[i]), float(sigma_psi[j]), float(sigma_proc[j]), diag


def _budget(resid, sigma_n, extra=0.0):
    sigma_tot2 = float(np.mean(resid**2))
    room = sigma_tot2 - sigma_n**2 - extra**2
    if room <= 0:
        raise DegenerateDataError(
            f"residual variance {sigma_tot2:.3g} leaves nothing for shadowing"
        )
    return sigma_tot2, room


def _budget_pairs(room, n=N_SIGMA_GRID):
    # sigma_psi on (0, sqrt(room)], sigma_proc takes the rest of the budget
    sigma_psi = np.sqrt(room) * np.arange(1, n + 1) / n
    sigma_proc = np.sqrt(np.clip(room - sigma_psi**2, 0.0, None))
    return sigma_psi, sigma_proc


def learn_cgp(data: TrainingSet, sigma_n, L0, estimate_proc=True, p=1, d_c_grid=D_C_GRID):
    """Classical GP learning on the reported means ``z_i``.

    With ``estimate_proc`` the process noise takes whatever part of the
    residual variance the shadowing does not (kind ``cGP``); without it
    ``sigma_proc = 0`` and ``sigma_psi`` is searched freely
    (kind ``cGP-no-proc``).
    """
    eta, resid = estimate_eta_ls(data, L0, "classical")
    sigma_tot2, room = _budget(resid, sigma_n)
    if estimate_proc:
        sig, proc = _budget_pairs(room)
    else:
        sig = 2.0 * np.sqrt(sigma_tot2) * np.arange(1, N_SIGMA_GRID_FREE + 1) / N_SIGMA_GRID_FREE
        proc = np.zeros_like(sig)
    z = data.z
    d_c, s_psi, s_proc, diag = _grid_search(
        resid, lambda d: correlation_classical(z, z, d, p), sig, proc, sigma_n, d_c_grid
    )
    theta = Hyperparameters(sigma_n, s_proc, d_c, L0, eta, s_psi, p)
    kind = "cGP" if estimate_proc else "cGP-no-proc"
    return LearnedModel(kind, theta, resid, float(np.sqrt(sigma_tot2)), diag)


def learn_ugp(data: TrainingSet, sigma_n, L0, sigma_proc_offline, estimate_proc=False, d_c_grid=D_C_GRID):
    """Uncertain-input GP learning with the expected mean and kernel (``p = 2``).

    With ``sigma_proc`` fixed at its offline value only ``d_c`` is searched
    and ``sigma_psi`` follows from the budget (kind ``uGP``).  With
    ``estimate_proc`` the budget is split over a grid as for ``cGP``
    (kind ``uGP-proc``).
    """
    eta, resid = estimate_eta_ls(data, L0, "expected")
    U = data.inputs
    if estimate_proc:
        sigma_tot2, room = _budget(resid, sigma_n)
        sig, proc = _budget_pairs(room)
    else:
        sigma_tot2, room = _budget(resid, sigma_n, sigma_proc_offline)
        sig, proc = np.array([np.sqrt(room)]), np.array([float(sigma_proc_offline)])
    d_c, s_psi, s_proc, diag = _grid_search(
        resid, lambda d: correlation_expected(U, None, d), sig, proc, sigma_n, d_c_grid
    )
    theta = Hyperparameters(sigma_n, s_proc, d_c, L0, eta, s_psi, 2)
    kind = "uGP-proc" if estimate_proc else "uGP"
    return LearnedModel(kind, theta, resid, float(np.sqrt(sigma_tot2)), diag)


def gagp_delta(data: TrainingSet, eta):
    """Diagonal of the moment-matching correction: ``Var[mu(x_i)]`` per input."""
    _, var, _ = log10_distance_moments_batch(data.inputs)
    return (10.0 * eta) ** 2 * var


def learn_gagp(data: TrainingSet, sigma_n, L0, sigma_proc_offline, d_c_grid=D_C_GRID):
    """Gaussian-approximation learning: expected kernel plus the diagonal ``Delta``.

    Same scaffolding as :func:`learn_ugp` with fixed ``sigma_proc``; the
    covariance gains ``Var[mu(x_i)]`` on its diagonal, so each ``d_c`` is
    scored with its own factorization.
    """
    eta, resid = estimate_eta_ls(data, L0, "expected")
    sigma_tot2, room = _budget(resid, sigma_n, sigma_proc_offline)
    s_psi = float(np.sqrt(room))
    delta = gagp_delta(data, eta)
    nugget = sigma_n**2 + sigma_proc_offline**2 + delta
    surface = np.empty(len(d_c_grid))
    for k, d in enumerate(d_c_grid):
        K = s_psi**2 * correlation_expected(data.inputs, None, d)
        K[np.diag_indices_from(K)] += nugget
        surface[k] = nll(resid, K)
    i = int(np.argmin(surface))
    diag = {"d_c_grid": d_c_grid, "nll": surface, "delta": delta, "on_boundary": i in (0, len(d_c_grid) - 1)}
    theta = Hyperparameters(sigma_n, float(sigma_proc_offline), float(d_c_grid[i]), L0, eta, s_psi, 2)
    return LearnedModel("GAGP", theta, resid, float(np.sqrt(sigma_tot2)), diag)


class _MCGPObjective:
    """Negative log of the sample-averaged Gaussian likelihood.

    The location samples are drawn once and reused for every evaluation,
    which keeps the objective deterministic for the simplex search.
    Identical samples (exact inputs) collapse to one.
    """

    def __init__(self, data: TrainingSet, sigma_n, L0, M, rng):
        U = data.inputs
        if U.is_exact:
            X = U.z[None]
        else:
            X = U.sample(rng, size=M)
        self.n_samples = M
        self.lg = _log10_distance(X)
        diff = X[:, :, None, :] - X[:, None, :, :]
        self.dist = np.sqrt(np.sum(diff * diff, axis=-1))
        self.b = data.y - L0
        self.sigma_n = sigma_n
        self.eye = np.eye(len(data))

    def __call__(self, params):
        eta, log_dc, log_sig, s_proc = params
        d_c, sig = np.exp(log_dc), np.exp(log_sig)
        K = sig**2 * np.exp(-self.dist / d_c) + (s_proc**2 + self.sigma_n**2) * self.eye
        r = np.broadcast_to(self.b + 10.0 * eta * self.lg, self.lg.shape)
        try:
            L = np.linalg.cholesky(K)
        except np.linalg.LinAlgError:
            return np.inf
        w = np.array([solve_triangular(Lm, rm, lower=True, check_finite=False) for Lm, rm in zip(L, r)])
        logdet = 2.0 * np.sum(np.log(np.diagonal(L, axis1=1, axis2=2)), axis=1)
        n = len(self.b)
        loglik = -0.5 * (np.sum(w * w, axis=1) + logdet + n * np.log(2 * np.pi))
        # identical samples contribute equally, so the average reduces to one term
        if len(loglik) == 1:
            return -float(loglik[0])
        return -float(logsumexp(loglik) - np.log(len(loglik)))


def learn_mcgp(data: TrainingSet, sigma_n, L0, M=300, rng=None, init: Hyperparameters | None = None):
    """Monte Carlo GP learning by Nelder-Mead over ``(eta, d_c, sigma_psi, sigma_proc)``.

    The covariance is the exponential kernel on sampled exact locations.
    The search starts from ``init`` (by default the ``cGP`` estimate) and
    stops after :data:`MCGP_MAX_ITER` iterations, returning the best point
    found with ``converged=False`` if the tolerances were not met.
    """
    if M < 1:
        raise ValueError("M must be at least 1")
    if init is None:
        init = learn_cgp(data, sigma_n, L0).theta
    objective = _MCGPObjective(data, sigma_n, L0, M, rng)
    x0 = np.array([init.eta, np.log(init.d_c), np.log(max(init.sigma_psi, 1e-3)), init.sigma_proc])
    steps = np.diag([0.1, 0.2, 0.1, 0.5])
    f0 = objective(x0)
    res = optimize.minimize(
        objective, x0, method="Nelder-Mead",
        options={"maxiter": MCGP_MAX_ITER, "xatol": MCGP_RTOL, "fatol": MCGP_RTOL * max(abs(f0), 1.0),
                 "initial_simplex": np.vstack([x0, x0 + steps])},
    )
    eta, log_dc, log_sig, s_proc = res.x
    theta = Hyperparameters(sigma_n, abs(float(s_proc)), float(np.exp(log_dc)), L0, float(eta),
                            float(np.exp(log_sig)), 1)
    resid = data.y - L0 + 10.0 * theta.eta * _log10_distance(data.z)
    diag = {"objective": float(res.fun), "n_iter": int(res.nit), "n_eval": int(res.nfev),
            "n_samples": len(objective.lg), "message": str(res.message)}
    if not res.success:
        logger.warning("MCGP simplex stopped without converging: %s", res.message)
    return LearnedModel("MCGP", theta, resid, float(np.sqrt(np.mean(resid**2))), diag, bool(res.success))


def calibrate_sigma_proc_offline(config: FieldConfig, n_realizations=40, n_train=100, seed=0, truth_p=1):
    """Average process noise of a ``p = 2`` model fitted to exact-location data.

    Each realization draws a field (covariance exponent ``truth_p``) and
    ``n_train`` exact measurements, then runs budgeted grid-search learning
    with the squared-exponential kernel.  The mean ``sigma_proc`` estimates
    the kernel mismatch that the uncertain-input GP has to absorb.
    """
    out = []
    for k in range(n_realizations):
        ss = np.random.SeedSequence(seed, spawn_key=(k,))
        f_rng, t_rng = (np.random.default_rng(s) for s in ss.spawn(2))
        field_ = generate_shadowing_field(config, f_rng, p=truth_p)
        data = make_training_set(field_, n_train, 0.0, t_rng)
        model = learn_cgp(data, config.sigma_n, config.L0, estimate_proc=True, p=2)
        out.append(model.theta.sigma_proc)
    return float(np.mean(out))

