"""Predict received power along a route and allocate rates with a safety margin.

Training positions carry a mean error of 10 m.  The allocated rate uses
the predicted power minus ``alpha`` predictive standard deviations.  Run
with ``python3 demos/prediction_and_allocation.py``.
"""

import numpy as np

from ugp import FieldConfig, Locations, learn_cgp, learn_ugp, make_training_set, predict_cgp, predict_ugp
from ugp.experiments import ExperimentConfig, allocation_metrics
from ugp.field import draw_location_errors, generate_shadowing_field

cfg = FieldConfig()
field = generate_shadowing_field(cfg, np.random.default_rng(4))
sig = draw_location_errors(100, 10.0, np.random.default_rng(5))
data = make_training_set(field, 100, sig, np.random.default_rng(6))

cgp = learn_cgp(data, cfg.sigma_n, cfg.L0)
ugp = learn_ugp(data, cfg.sigma_n, cfg.L0, sigma_proc_offline=2.0)
route = field.grid
posts = {
    "cGP": predict_cgp(cgp, data, route),
    "uGP": predict_ugp(ugp, data, Locations.exact(route)),
}
truth = field.power
for name, post in posts.items():
    print(f"{name}: MSE {np.mean((post.mean - truth) ** 2):6.2f} dB^2, "
          f"mean predictive std {np.mean(post.std):5.2f} dB")

noise = ExperimentConfig(field=cfg).noise_dBm
print(f"\nreceiver noise {noise:.1f} dBm; effective rate (bits/use) and undelivered fraction:")
print(f"{'alpha':>5} | " + " | ".join(f"{n:>16}" for n in posts))
for alpha in (0.0, 1.0, 2.0, 3.0):
    cells = []
    for post in posts.values():
        r_eff, frac = allocation_metrics(post.mean, post.std, truth, alpha, noise)
        cells.append(f"{r_eff:6.3f} / {frac:6.1%}")
    print(f"{alpha:5.1f} | " + " | ".join(f"{c:>16}" for c in cells))
