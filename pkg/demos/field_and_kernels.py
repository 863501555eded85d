"""Draw a channel field, then compare the classical and expected kernels.

Run with ``python3 demos/field_and_kernels.py``.
"""

import numpy as np

from ugp import FieldConfig, Hyperparameters, LocationDistribution, cov_classical, cov_expected, expected_mean
from ugp.field import generate_shadowing_field, received_power_at

cfg = FieldConfig()
field = generate_shadowing_field(cfg, np.random.default_rng(0))
print(f"grid: {len(field)} points from {cfg.extent_min[0]:g} m to {cfg.extent_max[0]:g} m")
for x in (25.0, 50.0, 100.0, 190.0):
    print(f"  P({x:5.1f} m) = {received_power_at(field, x):7.2f} dBm"
          f"  (path loss {cfg.path_loss(np.array([x]))[0]:7.2f} dBm)")

# Uncertainty about where two measurements were taken lowers their correlation.
theta = Hyperparameters(d_c=cfg.d_c, sigma_psi=cfg.sigma_psi, p=2)
print("\ncovariance of two points 10 m apart as location uncertainty grows:")
for s in (0.0, 2.0, 5.0, 10.0):
    u_i = LocationDistribution.isotropic([60.0], s)
    u_j = LocationDistribution.isotropic([70.0], s)
    print(f"  sigma {s:4.1f} m: {cov_expected(u_i, u_j, theta):6.2f} dB^2"
          f"  (exact locations: {cov_classical(60.0, 70.0, theta):6.2f})")

# Averaging the path loss over an uncertain location shifts the mean upward (log10 is concave).
print("\nexpected path-loss mean at 50 m:")
for s in (0.0, 5.0, 10.0, 16.0):
    mu = expected_mean(LocationDistribution.isotropic([50.0], s), Hyperparameters())
    print(f"  sigma {s:4.1f} m: {mu:7.3f} dBm")
