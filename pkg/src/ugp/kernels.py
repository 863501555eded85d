"""Mean and covariance functions on exact and uncertain locations.

Two covariance families live here:

* the classical kernel ``sigma_psi**2 exp(-(r/d_c)**p) + delta_ij sigma_proc**2``
  on exact locations (``p`` is 1 or 2);
* its expectation over two Gaussian location beliefs, which has a closed
  form for ``p = 2``: with ``S = Sigma_i + Sigma_j`` and ``dz = z_i - z_j``,
  ``sigma_psi**2 |I + 2 S / d_c**2|**-0.5 exp(-dz^T (d_c**2 I + 2 S)^-1 dz)``
  for distinct inputs and ``sigma_psi**2 + sigma_proc**2`` on the diagonal.

The expected path-loss mean ``L0 - 10 eta E[log10 |x|]`` is evaluated by
approximating ``log10`` with a least-squares polynomial and integrating it
against the Gaussian approximation of the distance distribution.
"""

from __future__ import annotations

import csv
import dataclasses
import functools
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.polynomial import Chebyshev, Polynomial
from numpy.polynomial import chebyshev as cheb
from scipy.linalg import solve_triangular

from .exceptions import ConfigError, DegreeTooHighError, UnsupportedKernelError
from .field import LocationDistribution, Locations

#: Distances are floored here before taking log10 (transmitter near field).
MIN_DISTANCE = 1.0
#: Largest polynomial degree accepted for the log10 approximation.
MAX_DEGREE = 12
N_FIT_SAMPLES = 10_000
#: Smallest ``|z| / sigma`` for which the distance is treated as Gaussian.
GAUSSIAN_DISTANCE_RATIO = 3.0
#: Same threshold for the variance of ``log10 |x|``, which is far more
#: sensitive to the mass near the transmitter.
GAUSSIAN_VARIANCE_RATIO = 4.0
LOCAL_FIT_TOL = 1e-6
FALLBACK_SAMPLES = 100_000
FALLBACK_SEED = 20150417


@dataclass(frozen=True)
class Hyperparameters:
    """Channel model parameters.

    Standard deviations are in dB, ``d_c`` in meters, ``L0`` in dBm and
    ``p`` is the kernel exponent (1: exponential, 2: squared exponential).
    """

    sigma_n: float = 0.01
    sigma_proc: float = 0.0
    d_c: float = 15.0
    L0: float = -10.0
    eta: float = 2.5
    sigma_psi: float = 10.0
    p: int = 1

    def __post_init__(self):
        if min(self.sigma_n, self.sigma_proc, self.sigma_psi) < 0:
            raise ConfigError("standard deviations must be nonnegative")
        if not self.d_c > 0:
            raise ConfigError("d_c must be positive")
        if self.p not in (1, 2):
            raise ConfigError("kernel exponent p must be 1 or 2")

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


# --------------------------------------------------------------------------
# covariance functions


def _pairwise_sqdist(X1, X2):
    X1 = np.asarray(X1, dtype=float)
    X2 = np.asarray(X2, dtype=float)
    if X1.ndim == 1:
        X1 = X1[:, None]
    if X2.ndim == 1:
        X2 = X2[:, None]
    diff = X1[:, None, :] - X2[None, :, :]
    return np.sum(diff * diff, axis=-1)


def correlation_classical(X1, X2, d_c, p):
    """Unit-variance classical correlation matrix ``exp(-(r/d_c)**p)``."""
    sq = _pairwise_sqdist(X1, X2)
    if p == 1:
        return np.exp(-np.sqrt(sq) / d_c)
    # same operation order as the expected kernel, so zero covariances match bit for bit
    return np.exp(-(1.0 / d_c**2) * sq)


def gram_classical(X, theta: Hyperparameters, X2=None):
    """Classical covariance matrix (measurement noise excluded).

    Without ``X2`` the rows and columns index the same points, so the
    ``sigma_proc**2`` term is added on the diagonal; with ``X2`` every
    pair is treated as distinct.
    """
    if X2 is None:
        K = theta.sigma_psi**2 * correlation_classical(X, X, theta.d_c, theta.p)
        K[np.diag_indices_from(K)] += theta.sigma_proc**2
        return K
    return theta.sigma_psi**2 * correlation_classical(X, X2, theta.d_c, theta.p)


def cov_classical(x_i, x_j, theta: Hyperparameters, same_index=False):
    dz = np.atleast_1d(np.asarray(x_i, float) - np.asarray(x_j, float))
    sq = float(dz @ dz)
    if theta.p == 1:
        val = theta.sigma_psi**2 * np.exp(-np.sqrt(sq) / theta.d_c)
    else:
        val = theta.sigma_psi**2 * np.exp(-sq / theta.d_c**2)
    return float(val + (theta.sigma_proc**2 if same_index else 0.0))


def correlation_expected(U1, U2, d_c):
    """Unit-variance expected squared-exponential correlation.

    With ``U2 is None`` the matrix is over a single set and its diagonal
    uses the same-index form (exactly 1); otherwise all pairs are distinct.
    """
    U1 = Locations.coerce(U1)
    same = U2 is None
    U2 = U1 if same else Locations.coerce(U2)
    if U1.dim != U2.dim:
        raise ValueError("location dimensions differ")
    dim = U1.dim
    dz = U1.z[:, None, :] - U2.z[None, :, :]
    inv_dc2 = 1.0 / d_c**2
    s1, s2 = U1.isotropic_variances(), U2.isotropic_variances()
    if s1 is not None and s2 is not None:
        a = 1.0 + 2.0 * inv_dc2 * (s1[:, None] + s2[None, :])
        quad = np.sum(dz * dz, axis=-1) / a
        det = a**dim
    else:
        A = np.eye(dim) + 2.0 * inv_dc2 * (U1.Sigma[:, None] + U2.Sigma[None, :])
        quad = np.einsum("...i,...i->...", dz, np.linalg.solve(A, dz[..., None])[..., 0])
        det = np.linalg.det(A)
    R = det ** -0.5 * np.exp(-inv_dc2 * quad)
    if same:
        R[np.diag_indices_from(R)] = 1.0
    return R


def gram_expected(U, theta: Hyperparameters, U2=None):
    """Expected covariance matrix over Gaussian location beliefs (noise excluded)."""
    if theta.p != 2:
        raise UnsupportedKernelError("the expected kernel has a closed form only for p = 2")
    if U2 is None:
        K = theta.sigma_psi**2 * correlation_expected(U, None, theta.d_c)
        K[np.diag_indices_from(K)] += theta.sigma_proc**2
        return K
    return theta.sigma_psi**2 * correlation_expected(U, U2, theta.d_c)


def cov_expected(u_i: LocationDistribution, u_j: LocationDistribution, theta: Hyperparameters,
                 same_index=False):
    """Covariance of the received power at two uncertain locations.

    The determinant attenuation is switched off for ``same_index``; the
    matrix inside the exponent always carries both covariances (the
    exponent vanishes there anyway).
    """
    if theta.p != 2:
        raise UnsupportedKernelError("the expected kernel has a closed form only for p = 2")
    if u_i.dim != u_j.dim:
        raise ValueError("location dimensions differ")
    dim = u_i.dim
    S = 2.0 * (u_i.Sigma + u_j.Sigma) / theta.d_c**2
    dz = u_i.z - u_j.z
    quad = float(dz @ np.linalg.solve(np.eye(dim) + S, dz))
    det = 1.0 if same_index else float(np.linalg.det(np.eye(dim) + S))
    val = theta.sigma_psi**2 * det**-0.5 * np.exp(-quad / theta.d_c**2)
    return float(val + (theta.sigma_proc**2 if same_index else 0.0))


# --------------------------------------------------------------------------
# polynomial approximation of log10


@functools.lru_cache(maxsize=4)
def _fit_basis(n_samples):
    t = np.linspace(-1.0, 1.0, n_samples)
    V = cheb.chebvander(t, MAX_DEGREE)
    Q, R = np.linalg.qr(V)
    return t, V, Q, R


@functools.lru_cache(maxsize=1)
def _cheb_to_mono():
    # column j holds the monomial coefficients of T_j
    n = MAX_DEGREE + 1
    P = np.zeros((n, n))
    for j in range(n):
        P[: j + 1, j] = cheb.cheb2poly(np.eye(j + 1)[j])
    return P


@dataclass(frozen=True)
class PolyLogApprox:
    """Polynomial ``w(d) = sum_j a_j d**j`` approximating ``log10(d)`` on ``[d_lo, d_hi]``.

    The polynomial is stored as a Chebyshev series on the fit interval
    (``cheb_coeffs``), which is far better conditioned for evaluation and
    Gaussian integration; ``coeffs`` gives the monomial coefficients ``a_j``.
    """

    d_lo: float
    d_hi: float
    max_err: float
    cheb_coeffs: np.ndarray

    @classmethod
    def from_monomial(cls, coeffs, d_lo, d_hi, max_err=float("nan")):
        c = Polynomial(coeffs).convert(kind=Chebyshev, domain=[d_lo, d_hi]).coef
        return cls(float(d_lo), float(d_hi), float(max_err), c)

    @functools.cached_property
    def coeffs(self):
        return Chebyshev(self.cheb_coeffs, domain=[self.d_lo, self.d_hi]).convert(kind=Polynomial).coef

    @property
    def J(self):
        return len(self.cheb_coeffs) - 1

    @property
    def fit_range(self):
        return (self.d_lo, self.d_hi)

    def __call__(self, d):
        half = 0.5 * (self.d_hi - self.d_lo)
        center = 0.5 * (self.d_hi + self.d_lo)
        return cheb.chebval((np.asarray(d, dtype=float) - center) / half, self.cheb_coeffs)

    def gaussian_expectation(self, m, s, power=1):
        """``E[w(d)**power]`` for ``d ~ N(m, s**2)``, exact via Gaussian moments."""
        half = 0.5 * (self.d_hi - self.d_lo)
        center = 0.5 * (self.d_hi + self.d_lo)
        n = len(self.cheb_coeffs)
        mono = _cheb_to_mono()[:n, :n] @ self.cheb_coeffs
        series = mono
        for _ in range(power - 1):
            series = np.convolve(series, mono)
        moments = gaussian_raw_moments((m - center) / half, s / half, len(series) - 1)
        return float(series @ moments)

    def to_csv_row(self):
        return [str(self.J), repr(self.d_lo), repr(self.d_hi), repr(self.max_err)] + [
            repr(float(a)) for a in self.coeffs
        ]

    @classmethod
    def from_csv_row(cls, row):
        J = int(row[0])
        d_lo, d_hi, max_err = (float(v) for v in row[1:4])
        coeffs = np.array([float(v) for v in row[4:]])
        if len(coeffs) != J + 1:
            raise ValueError(f"expected {J + 1} coefficients, got {len(coeffs)}")
        return cls.from_monomial(coeffs, d_lo, d_hi, max_err)


CSV_HEADER_POLY = ["J", "d_lo", "d_hi", "max_err"]


def write_poly_csv(approx: PolyLogApprox, path):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER_POLY + [f"a_{j}" for j in range(approx.J + 1)])
        w.writerow(approx.to_csv_row())


def read_poly_csv(path):
    with Path(path).open(encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    return PolyLogApprox.from_csv_row(rows[1])


def fit_log10_polynomial(d_lo, d_hi, J=None, tol=1e-3, strict=True):
    """Least-squares polynomial fit of ``log10`` on ``[d_lo, d_hi]``.

    The fit uses 10**4 uniform samples and an orthogonalized Chebyshev
    basis.  With ``J=None`` the smallest degree up to :data:`MAX_DEGREE`
    whose maximum sample error is at most ``tol`` is selected; if none
    qualifies, ``strict`` decides between raising
    :class:`DegreeTooHighError` and returning the degree-12 fit.
    """
    if not 0 < d_lo < d_hi:
        raise ValueError("need 0 < d_lo < d_hi")
    if J is not None and not 1 <= J <= MAX_DEGREE:
        raise DegreeTooHighError(f"degree must be in [1, {MAX_DEGREE}], got {J}")
    t, _V, Q, R = _fit_basis(N_FIT_SAMPLES)
    half = 0.5 * (d_hi - d_lo)
    center = 0.5 * (d_hi + d_lo)
    f = np.log10(center + half * t)
    qf = Q.T @ f
    # orthonormal columns: each extra degree adds one term to the fit
    fit = Q[:, 0] * qf[0]
    deg, err = 0, np.inf
    for deg in range(1, (J or MAX_DEGREE) + 1):
        fit += Q[:, deg] * qf[deg]
        if J is not None and deg < J:
            continue
        err = float(np.max(np.abs(fit - f)))
        if err <= tol or J is not None:
            break
    else:
        if strict:
            raise DegreeTooHighError(
                f"log10 on [{d_lo:g}, {d_hi:g}] needs degree > {MAX_DEGREE} for tolerance {tol:g}"
            )
    c = solve_triangular(R[: deg + 1, : deg + 1], qf[: deg + 1])
    return PolyLogApprox(float(d_lo), float(d_hi), err, c)


def gaussian_raw_moments(m, s, J):
    """Raw moments ``E[d**j]``, ``j = 0..J``, of ``d ~ N(m, s**2)``."""
    out = np.empty(J + 1)
    out[0] = 1.0
    if J >= 1:
        out[1] = m
    for j in range(2, J + 1):
        out[j] = m * out[j - 1] + (j - 1) * s * s * out[j - 2]
    return out


# --------------------------------------------------------------------------
# expected mean


def _fallback_moments(z, Sigma):
    rng = np.random.default_rng(FALLBACK_SEED)
    w, V = np.linalg.eigh(Sigma)
    root = V * np.sqrt(np.clip(w, 0, None))
    x = z + rng.standard_normal((FALLBACK_SAMPLES, len(z))) @ root.T
    lg = np.log10(np.maximum(np.linalg.norm(x, axis=1), MIN_DISTANCE))
    return float(lg.mean()), float(lg.var())


def log10_distance_moments(u: LocationDistribution, approx: PolyLogApprox | None = None):
    """Mean and variance of ``log10 |x|`` for ``x ~ N(z, Sigma)``.

    The distance is approximated as ``N(|z|, sigma**2)`` with ``sigma**2``
    the largest eigenvalue of ``Sigma``.  The log10 polynomial is ``approx``
    when its fit range covers the bulk of that Gaussian, otherwise a fit
    local to the input.  Below ``|z| / sigma = 3`` the Gaussian picture
    breaks down and a fixed-seed Monte Carlo estimate is used instead; the
    variance switches to that estimate already below a ratio of 4.

    Returns
    -------
    mean, var : float
    used_fallback : bool
    """
    r = float(np.linalg.norm(u.z))
    if u.is_exact:
        return float(np.log10(max(r, MIN_DISTANCE))), 0.0, False
    s = float(np.sqrt(max(np.linalg.eigvalsh(u.Sigma).max(), 0.0)))
    if r < GAUSSIAN_DISTANCE_RATIO * s:
        mean, var = _fallback_moments(u.z, u.Sigma)
        return mean, var, True
    k = min(6.0, 0.88 * r / s)
    lo, hi = r - k * s, r + k * s
    if approx is None or lo < approx.d_lo or hi > approx.d_hi:
        approx = _local_approx(lo, hi)
    mean = approx.gaussian_expectation(r, s)
    if r < GAUSSIAN_VARIANCE_RATIO * s:
        return mean, _fallback_moments(u.z, u.Sigma)[1], False
    second = approx.gaussian_expectation(r, s, power=2)
    return mean, max(second - mean * mean, 0.0), False


def _local_approx(lo, hi):
    return fit_log10_polynomial(lo, hi, tol=LOCAL_FIT_TOL, strict=False)


def expected_mean(u: LocationDistribution, theta: Hyperparameters, approx: PolyLogApprox | None = None):
    """Expected path-loss mean ``L0 - 10 eta E[log10 |x|]`` in dBm."""
    mean, _, _ = log10_distance_moments(u, approx)
    return theta.L0 - 10.0 * theta.eta * mean


def log10_distance_moments_batch(U, approx=None):
    """Vectorized :func:`log10_distance_moments` over a :class:`Locations` batch."""
    U = Locations.coerce(U)
    if U.is_exact:
        lg = np.log10(np.maximum(np.linalg.norm(U.z, axis=1), MIN_DISTANCE))
        return lg, np.zeros(len(U)), np.zeros(len(U), dtype=bool)
    out = np.array([log10_distance_moments(U[i], approx) for i in range(len(U))], dtype=object)
    return out[:, 0].astype(float), out[:, 1].astype(float), out[:, 2].astype(bool)


def mean_classical(X, theta: Hyperparameters):
    """Path-loss mean at exact locations ``X`` of shape ``(n, dim)``."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    d = np.maximum(np.linalg.norm(X, axis=-1), MIN_DISTANCE)
    return theta.L0 - 10.0 * theta.eta * np.log10(d)


def mean_expected(U, theta: Hyperparameters, approx=None):
    """Expected path-loss mean for every belief in ``U``."""
    lg, _, _ = log10_distance_moments_batch(U, approx)
    return theta.L0 - 10.0 * theta.eta * lg


def mean_variance(U, theta: Hyperparameters, approx=None):
    """``Var[mu(x_i)]`` under each belief: the diagonal moment-matching correction."""
    _, var, _ = log10_distance_moments_batch(U, approx)
    return (10.0 * theta.eta) ** 2 * var
