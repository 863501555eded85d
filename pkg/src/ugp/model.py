"""Containers shared by the learners and predictors."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .field import ChannelField, Locations, perturb_location
from .kernels import Hyperparameters

KINDS = ("cGP", "cGP-no-proc", "uGP", "uGP-proc", "MCGP", "GAGP")

CSV_HEADER_MODEL = ["kind", "eta_hat", "d_c_hat", "sigma_psi_hat", "sigma_proc_hat", "sigma_tot", "converged"]


@dataclass(frozen=True)
class TrainingSet:
    """Power observations ``y`` (dBm) paired with location beliefs.

    ``hidden_truth`` holds the true locations in simulations.  It exists
    for oracles and diagnostics only; no learner or predictor reads it.
    """

    inputs: Locations
    y: np.ndarray
    hidden_truth: Any = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        inputs = Locations.coerce(self.inputs)
        y = np.asarray(self.y, dtype=float).ravel()
        if len(inputs) != len(y):
            raise ValueError(f"{len(inputs)} inputs but {len(y)} observations")
        if len(y) < 2:
            raise ValueError("need at least two training points")
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "y", y)

    def __len__(self):
        return len(self.y)

    @property
    def z(self):
        """Reported mean locations, shape ``(N, dim)``."""
        return self.inputs.z

    def permuted(self, order):
        order = np.asarray(order)
        truth = None if self.hidden_truth is None else np.asarray(self.hidden_truth)[order]
        return TrainingSet(Locations(self.inputs.z[order], self.inputs.Sigma[order]), self.y[order], truth)


@dataclass(frozen=True)
class Posterior:
    """Predictive mean (dBm) and variance (dB^2), one entry per test input."""

    mean: np.ndarray
    variance: np.ndarray

    def __len__(self):
        return len(self.mean)

    @property
    def std(self):
        return np.sqrt(self.variance)


@dataclass(frozen=True)
class LearnedModel:
    """Result of one hyperparameter learning run.

    Attributes
    ----------
    kind : str
        One of :data:`KINDS`.
    theta : Hyperparameters
        Estimated parameters; ``sigma_n`` and ``L0`` are the known inputs.
    residuals : ndarray
        Observations with the fitted mean removed.
    sigma_tot : float
        Root mean square of ``residuals``.
    diagnostics : dict
        Grid-search surface or optimizer trace.
    converged : bool
        False when the optimizer stopped at its iteration limit.
    """

    kind: str
    theta: Hyperparameters
    residuals: np.ndarray
    sigma_tot: float
    diagnostics: dict = field(default_factory=dict, repr=False, compare=False)
    converged: bool = True

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")

    def to_csv_row(self):
        t = self.theta
        return [self.kind, repr(float(t.eta)), repr(float(t.d_c)), repr(float(t.sigma_psi)),
                repr(float(t.sigma_proc)), repr(float(self.sigma_tot)), str(bool(self.converged))]


def make_training_set(field_: ChannelField, n, sigmas, rng, rng_errors=None):
    """Simulate ``n`` measurements at distinct grid points with uncertain positions.

    ``rng`` picks the true locations and the measurement noise;
    ``rng_errors`` (default ``rng``) draws the reported location errors,
    whose standard deviations are ``sigmas``.  Keeping the two streams
    apart lets a sweep over the error scale reuse the same draws.
    """
    rng = np.random.default_rng(rng)
    rng_errors = rng if rng_errors is None else np.random.default_rng(rng_errors)
    if n > len(field_):
        raise ValueError(f"cannot place {n} points on a grid of {len(field_)}")
    idx = np.sort(rng.choice(len(field_), size=n, replace=False))
    x_true = field_.grid[idx]
    y = field_.power[idx] + field_.config.sigma_n * rng.standard_normal(n)
    inputs = perturb_location(x_true, np.broadcast_to(np.asarray(sigmas, float), (n,)), rng_errors)
    return TrainingSet(inputs, y, hidden_truth=x_true)
