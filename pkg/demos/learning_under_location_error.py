"""Learn channel parameters from measurements with growing location error.

The classical GP treats reported positions as exact and pays for it with a
growing correlation distance and process-noise estimate.  The
uncertain-input GP keeps its shadowing level steady; its correlation
distance is shorter because a squared-exponential kernel is fitted to an
exponential-kernel field, and it drifts less.  Run with
``python3 demos/learning_under_location_error.py``.
"""

import numpy as np

from ugp import FieldConfig, calibrate_sigma_proc_offline, learn_cgp, learn_ugp, make_training_set
from ugp.field import draw_location_errors, generate_shadowing_field

cfg = FieldConfig()
sigma_proc = calibrate_sigma_proc_offline(cfg, n_realizations=10)
print(f"offline sigma_proc (kernel mismatch): {sigma_proc:.2f} dB\n")

n_real = 10
print(f"{'lambda':>6} | {'cGP d_c':>8} {'sigma_psi':>9} {'sigma_proc':>10} | {'uGP d_c':>8} {'sigma_psi':>9}")
for lam in (0.0, 4.0, 8.0):
    rows = []
    for r in range(n_real):
        field = generate_shadowing_field(cfg, np.random.default_rng(r))
        sig = draw_location_errors(100, lam, np.random.default_rng(1000 + r))
        data = make_training_set(field, 100, sig, np.random.default_rng(2000 + r))
        c = learn_cgp(data, cfg.sigma_n, cfg.L0).theta
        u = learn_ugp(data, cfg.sigma_n, cfg.L0, sigma_proc).theta
        rows.append((c.d_c, c.sigma_psi, c.sigma_proc, u.d_c, u.sigma_psi))
    m = np.mean(rows, axis=0)
    print(f"{lam:6.1f} | {m[0]:8.2f} {m[1]:9.2f} {m[2]:10.2f} | {m[3]:8.2f} {m[4]:9.2f}")
print(f"\ntruth: d_c {cfg.d_c:g} m, sigma_psi {cfg.sigma_psi:g} dB")
