"""Ground-truth channel fields, noisy measurements and location uncertainty.

The transmitter sits at the origin.  Received power in dBm follows a
log-distance path loss plus spatially correlated log-normal shadowing whose
covariance is the exponential (Gudmundson) model
``sigma_psi**2 * exp(-|x_i - x_j| / d_c)``.
"""

from __future__ import annotations

import csv
import functools
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import ConfigError, DomainError
from .linalg import jitter_cholesky


@dataclass(frozen=True)
class FieldConfig:
    """Simulation parameters of a channel field.

    Defaults reproduce the simulation table used throughout the package:
    a 1-D ray from 20 m to 200 m sampled every 0.25 m, path-loss exponent
    2.5, -10 dBm reference power, 10 dB shadowing with 15 m correlation
    distance and 0.01 dB measurement noise.
    """

    extent_min: tuple = (20.0,)
    extent_max: tuple = (200.0,)
    resolution: float = 0.25
    sigma_psi: float = 10.0
    d_c: float = 15.0
    L0: float = -10.0
    eta: float = 2.5
    sigma_n: float = 0.01
    seed: int = 0

    def __post_init__(self):
        lo = tuple(float(v) for v in np.atleast_1d(self.extent_min))
        hi = tuple(float(v) for v in np.atleast_1d(self.extent_max))
        object.__setattr__(self, "extent_min", lo)
        object.__setattr__(self, "extent_max", hi)
        if len(lo) != len(hi) or len(lo) not in (1, 2):
            raise ConfigError("extent_min/extent_max must both have 1 or 2 components")
        if not self.resolution > 0:
            raise ConfigError("resolution must be positive")
        if any(b <= a for a, b in zip(lo, hi)):
            raise ConfigError("extent_max must exceed extent_min componentwise")
        if any(b - a < self.resolution for a, b in zip(lo, hi)):
            raise ConfigError("resolution larger than the field extent")
        if not self.sigma_psi > 0 or not self.d_c > 0 or not self.eta > 0:
            raise ConfigError("sigma_psi, d_c and eta must be positive")
        if self.sigma_n < 0:
            raise ConfigError("sigma_n must be nonnegative")

    @property
    def dim(self):
        return len(self.extent_min)

    def axes(self):
        """Per-axis sample coordinates of the regular lattice."""
        out = []
        for a, b in zip(self.extent_min, self.extent_max):
            n = int(np.floor((b - a) / self.resolution + 1e-9)) + 1
            out.append(a + self.resolution * np.arange(n))
        return out

    def path_loss(self, x):
        """Deterministic mean power ``L0 - 10 eta log10(|x|)`` in dBm."""
        return path_loss(x, self.L0, self.eta)


def path_loss(x, L0, eta):
    x = np.asarray(x, dtype=float)
    d = np.abs(x) if x.ndim <= 1 else np.linalg.norm(x, axis=-1)
    return L0 - 10.0 * eta * np.log10(d)


@dataclass(frozen=True)
class ChannelField:
    """One realization of the channel on a regular grid.

    ``grid`` has shape ``(n, dim)``; lattice points are ordered with the
    first axis varying slowest.  The origin is never part of the grid.
    """

    config: FieldConfig
    grid: np.ndarray
    shadowing: np.ndarray
    power: np.ndarray
    # lattice index of every grid row, -1 where the lattice point was dropped
    _lattice_index: np.ndarray = field(repr=False, default=None)

    def __len__(self):
        return len(self.power)


@functools.lru_cache(maxsize=8)
def _lattice(config_key):
    lo, hi, res = config_key
    cfg = FieldConfig(extent_min=lo, extent_max=hi, resolution=res)
    axes = cfg.axes()
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=-1)
    keep = np.linalg.norm(pts, axis=1) > 0
    lattice_index = np.full(len(pts), -1, dtype=np.int64)
    lattice_index[keep] = np.arange(int(keep.sum()))
    return pts[keep], lattice_index


def make_grid(config):
    """Grid locations of ``config`` with the origin removed, shape ``(n, dim)``."""
    return _lattice((config.extent_min, config.extent_max, config.resolution))[0]


@functools.lru_cache(maxsize=8)
def _correlation_factor(config_key):
    lo, hi, res, d_c, p = config_key
    grid, _ = _lattice((lo, hi, res))
    diff = grid[:, None, :] - grid[None, :, :]
    C = np.exp(-((np.sqrt(np.sum(diff**2, axis=-1)) / d_c) ** p))
    L, _ = jitter_cholesky(C, scale=1.0)
    return L


def generate_shadowing_field(config: FieldConfig, rng, p=1) -> ChannelField:
    """Draw one correlated-shadowing field and the resulting received power.

    ``p = 1`` gives the exponential covariance; ``p = 2`` swaps in the
    squared exponential, which is only used to build matched-model
    references.  The unit-variance correlation factor is cached per grid
    geometry, so repeated realizations cost one matrix-vector product each.
    """
    if p not in (1, 2):
        raise ConfigError("covariance exponent must be 1 or 2")
    rng = np.random.default_rng(rng)
    grid, lattice_index = _lattice((config.extent_min, config.extent_max, config.resolution))
    if len(grid) > 4000:
        raise ConfigError(f"grid has {len(grid)} points; dense sampling supports at most 4000")
    L = _correlation_factor((config.extent_min, config.extent_max, config.resolution, config.d_c, p))
    shadowing = config.sigma_psi * (L @ rng.standard_normal(len(grid)))
    power = config.path_loss(grid) + shadowing
    return ChannelField(config, grid, shadowing, power, lattice_index)


def _nearest_index(field_: ChannelField, x):
    cfg = field_.config
    x = np.asarray(x, dtype=float).reshape(-1, cfg.dim)
    lo = np.asarray(cfg.extent_min)
    hi = np.asarray(cfg.extent_max)
    tol = 1e-9 * max(1.0, float(np.max(np.abs(hi))))
    if np.any(x < lo - tol) or np.any(x > hi + tol):
        raise DomainError("location outside the field extent")
    axes = cfg.axes()
    # ceil(t - 0.5) rounds exact midpoints toward the lower index
    idx = [
        np.clip(np.ceil((x[:, k] - lo[k]) / cfg.resolution - 0.5).astype(np.int64), 0, len(ax) - 1)
        for k, ax in enumerate(axes)
    ]
    flat = np.ravel_multi_index(idx, [len(ax) for ax in axes])
    rows = field_._lattice_index[flat]
    bad = rows < 0
    if np.any(bad):
        # the nearest lattice point is the removed origin: search the grid directly
        d = np.linalg.norm(x[bad][:, None, :] - field_.grid[None, :, :], axis=-1)
        rows[bad] = np.argmin(d, axis=1)
    return rows


def received_power_at(field_: ChannelField, x):
    """Power (dBm) at the grid point nearest to ``x``; ties go to the lower index.

    ``x`` may be a single location or an array of shape ``(n, dim)``; the
    result is a float or an array accordingly.
    """
    rows = _nearest_index(field_, x)
    out = field_.power[rows]
    return float(out[0]) if _is_single(x, field_.config.dim) else out


def _is_single(x, dim):
    return np.ndim(x) == (0 if dim == 1 else 1)


def sample_measurement(field_: ChannelField, x, sigma_n, rng):
    """Noisy power observation ``received_power_at(x) + N(0, sigma_n**2)``."""
    rng = np.random.default_rng(rng)
    p = received_power_at(field_, x)
    return p + sigma_n * rng.standard_normal(np.shape(p))


def draw_location_errors(n, lam, rng):
    """Heterogeneous location-error standard deviations, i.i.d. exponential with mean ``lam``."""
    if lam < 0:
        raise ConfigError("mean location error must be nonnegative")
    rng = np.random.default_rng(rng)
    if lam == 0:
        return np.zeros(n)
    return rng.exponential(lam, size=n)


@dataclass(frozen=True)
class LocationDistribution:
    """Gaussian belief about a location: mean ``z`` and covariance ``Sigma``.

    ``Sigma == 0`` represents an exactly known location.
    """

    z: np.ndarray
    Sigma: np.ndarray

    def __post_init__(self):
        z = np.atleast_1d(np.asarray(self.z, dtype=float))
        S = np.asarray(self.Sigma, dtype=float)
        if S.ndim == 0:
            S = S * np.eye(len(z))
        if S.shape != (len(z), len(z)):
            raise ValueError("Sigma must be dim x dim")
        if not np.allclose(S, S.T):
            raise DomainError("Sigma must be symmetric")
        if np.min(np.linalg.eigvalsh(S)) < -1e-12 * max(1.0, np.abs(S).max()):
            raise DomainError("Sigma must be positive semidefinite")
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "Sigma", S)

    @property
    def dim(self):
        return len(self.z)

    @property
    def is_exact(self):
        return not np.any(self.Sigma)

    @classmethod
    def exact(cls, x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return cls(x, np.zeros((len(x), len(x))))

    @classmethod
    def isotropic(cls, z, sigma):
        z = np.atleast_1d(np.asarray(z, dtype=float))
        return cls(z, sigma**2 * np.eye(len(z)))


class Locations:
    """A batch of Gaussian location beliefs stored as arrays.

    ``z`` has shape ``(n, dim)`` and ``Sigma`` shape ``(n, dim, dim)``.
    This is the form consumed by the kernel and GP routines.
    """

    def __init__(self, z, Sigma=None):
        z = np.asarray(z, dtype=float)
        if z.ndim == 1:
            z = z[:, None]
        n, dim = z.shape
        if Sigma is None:
            Sigma = np.zeros((n, dim, dim))
        Sigma = np.asarray(Sigma, dtype=float)
        if Sigma.shape != (n, dim, dim):
            raise ValueError(f"Sigma must have shape {(n, dim, dim)}, got {Sigma.shape}")
        self.z = z
        self.Sigma = Sigma

    @classmethod
    def exact(cls, x):
        return cls(x)

    @classmethod
    def isotropic(cls, z, sigma):
        z = np.asarray(z, dtype=float)
        if z.ndim == 1:
            z = z[:, None]
        sigma = np.broadcast_to(np.asarray(sigma, dtype=float), (len(z),))
        return cls(z, sigma[:, None, None] ** 2 * np.eye(z.shape[1]))

    @classmethod
    def from_distributions(cls, dists):
        dists = list(dists)
        return cls(np.stack([u.z for u in dists]), np.stack([u.Sigma for u in dists]))

    @classmethod
    def coerce(cls, u):
        if isinstance(u, Locations):
            return u
        if isinstance(u, LocationDistribution):
            return cls(u.z[None, :], u.Sigma[None])
        if isinstance(u, (list, tuple)) and u and isinstance(u[0], LocationDistribution):
            return cls.from_distributions(u)
        return cls.exact(u)

    def __len__(self):
        return len(self.z)

    def __getitem__(self, i):
        if isinstance(i, (int, np.integer)):
            return LocationDistribution(self.z[i], self.Sigma[i])
        return Locations(self.z[i], self.Sigma[i])

    @property
    def dim(self):
        return self.z.shape[1]

    @property
    def is_exact(self):
        return not np.any(self.Sigma)

    def isotropic_variances(self):
        """Per-input ``sigma**2`` if every covariance is isotropic, else ``None``."""
        dim = self.dim
        s2 = np.trace(self.Sigma, axis1=1, axis2=2) / dim
        if np.allclose(self.Sigma, s2[:, None, None] * np.eye(dim), rtol=0, atol=1e-12 * max(1.0, s2.max(initial=0))):
            return s2
        return None

    def sample(self, rng, size=None):
        """Draw true locations; returns ``(n, dim)`` or ``(size, n, dim)``."""
        rng = np.random.default_rng(rng)
        shape = (len(self), self.dim) if size is None else (size, len(self), self.dim)
        e = rng.standard_normal(shape)
        s2 = self.isotropic_variances()
        if s2 is not None:
            return self.z + np.sqrt(s2)[:, None] * e
        w, V = np.linalg.eigh(self.Sigma)
        root = V * np.sqrt(np.clip(w, 0, None))[:, None, :]
        return self.z + np.einsum("nij,...nj->...ni", root, e)


def perturb_location(x_true, sigma, rng):
    """Report a noisy location estimate together with its error covariance.

    The reported mean is ``x_true + e`` with ``e ~ N(0, sigma**2 I)``; the
    reported covariance is ``sigma**2 I``.  Vectorized: ``x_true`` may be
    ``(n, dim)`` (or ``(n,)`` in 1-D) with ``sigma`` of shape ``(n,)``, in
    which case a :class:`Locations` batch is returned.
    """
    if np.any(np.asarray(sigma) < 0):
        raise ConfigError("location error std must be nonnegative")
    rng = np.random.default_rng(rng)
    x = np.asarray(x_true, dtype=float)
    if np.ndim(sigma) == 0:
        x = np.atleast_1d(x)
        z = x + sigma * rng.standard_normal(x.shape)
        return LocationDistribution.isotropic(z, float(sigma))
    if x.ndim == 1:
        x = x[:, None]
    sigma = np.broadcast_to(np.asarray(sigma, dtype=float), (len(x),))
    z = x + sigma[:, None] * rng.standard_normal(x.shape)
    return Locations.isotropic(z, sigma)


def write_field_csv(field_: ChannelField, path):
    """Write ``loc_x[,loc_y],shadowing_db,power_dbm`` rows with round-trip precision."""
    path = Path(path)
    names = ["loc_x", "loc_y"][: field_.config.dim]
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names + ["shadowing_db", "power_dbm"])
        for loc, s, p in zip(field_.grid, field_.shadowing, field_.power):
            w.writerow([repr(float(v)) for v in loc] + [repr(float(s)), repr(float(p))])


def read_field_csv(path, config: FieldConfig | None = None):
    """Read a field CSV back; the config defaults to the grid's bounding box."""
    with Path(path).open(encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], np.array(rows[1:], dtype=float)
    dim = len(header) - 2
    grid, shadowing, power = body[:, :dim], body[:, dim], body[:, dim + 1]
    if config is None:
        res = float(np.min(np.diff(np.unique(grid[:, 0])))) if len(grid) > 1 else 1.0
        config = FieldConfig(tuple(grid.min(axis=0)), tuple(grid.max(axis=0)), res)
    _, lattice_index = _lattice((config.extent_min, config.extent_max, config.resolution))
    return ChannelField(config, grid, shadowing, power, lattice_index)
