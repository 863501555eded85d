"""Simulation studies: hyperparameter learning, prediction with uncertain
training or test locations, and proactive rate allocation.

Every realization derives its random streams from
``SeedSequence(master_seed, spawn_key=(realization, stream, ...))`` and the
same field, training locations and location-error draws are reused for
every value of a sweep.  Results therefore depend only on the master seed
and never on the number of workers or the order in which realizations
finish.
"""

from __future__ import annotations

import csv
import dataclasses
import logging
import os
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import ConfigError, DomainError
from .field import (
    ChannelField,
    FieldConfig,
    Locations,
    draw_location_errors,
    generate_shadowing_field,
    make_grid,
    received_power_at,
)
from .learning import calibrate_sigma_proc_offline, learn_cgp, learn_gagp, learn_mcgp, learn_ugp
from .model import KINDS, make_training_set
from .prediction import predict_cgp, predict_mcgp, predict_ugp

logger = logging.getLogger(__name__)

# stream identifiers inside a realization
FIELD, TRAIN, ERRORS, MC, TEST = range(5)

METRICS = ("d_c_hat", "sigma_psi_hat", "sigma_proc_hat", "eta_hat", "mse", "r_eff", "undelivered_frac")
CSV_HEADER_METRIC = ["method", "sweep_name", "sweep_value", "metric", "mean", "std", "n"]
CSV_HEADER_RAW = ["method", "sweep_name", "sweep_value", "metric", "realization", "value"]
CSV_HEADER_FAILURE = ["experiment", "method", "sweep_name", "sweep_value", "realization", "error"]

DEFAULT_METHODS = {
    "learning": ("cGP", "cGP-no-proc", "uGP", "uGP-proc", "GAGP", "MCGP"),
    "pred-train": ("cGP", "uGP"),
    "pred-test": ("cGP", "uGP", "MCGP"),
    "resource": ("cGP", "uGP"),
}
PREDICTORS = ("cGP", "uGP", "MCGP")


def stream(master_seed, realization, *key):
    """Independent generator for ``(realization, *key)`` under ``master_seed``."""
    return np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=(realization, *key)))


@dataclass(frozen=True)
class ExperimentConfig:
    """Parameters of one simulation study.

    ``methods=None`` selects the study's default methods and
    ``n_realizations=None`` its default count (40 for learning, 50
    otherwise).  ``W_dBm=None`` places the receiver noise 10 dB below the
    median path loss over the grid.  ``sigma_proc_offline=None`` triggers
    an offline calibration with ``n_calibration`` realizations.
    """

    field: FieldConfig = FieldConfig()
    n_train: int = 100
    n_test: int | None = None
    lambda_sweep: tuple = (0.0, 2.0, 4.0, 6.0, 8.0, 10.0)
    sigma_sweep: tuple = (0.0, 1.0, 2.0, 3.0, 5.0, 8.0)
    alpha_sweep: tuple = (0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0)
    resource_lambdas: tuple = (0.0, 10.0)
    n_realizations: int | None = None
    M: int = 300
    methods: tuple | None = None
    W_dBm: float | None = None
    master_seed: int = 0
    sigma_proc_offline: float | None = None
    n_calibration: int = 40
    prx_budget: int = 10_000
    test_margin: float = 20.0
    test_spacing: float = 2.0

    def __post_init__(self):
        for name in ("lambda_sweep", "sigma_sweep", "alpha_sweep", "resource_lambdas"):
            vals = tuple(float(v) for v in getattr(self, name))
            if not vals:
                raise ConfigError(f"{name} must not be empty")
            if any(b < a for a, b in zip(vals, vals[1:])):
                raise ConfigError(f"{name} must be nondecreasing")
            if vals[0] < 0:
                raise ConfigError(f"{name} must be nonnegative")
            object.__setattr__(self, name, vals)
        if self.methods is not None:
            methods = tuple(self.methods)
            unknown = [m for m in methods if m not in KINDS]
            if unknown or not methods:
                raise ConfigError(f"unknown methods {unknown}; choose from {', '.join(KINDS)}")
            object.__setattr__(self, "methods", methods)
        for name in ("n_train", "M", "n_calibration"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be at least 1")
        if self.n_train < 2:
            raise ConfigError("n_train must be at least 2")
        if self.n_realizations is not None and self.n_realizations < 1:
            raise ConfigError("n_realizations must be at least 1")
        if self.n_test is not None and self.n_test < 1:
            raise ConfigError("n_test must be at least 1")
        if self.prx_budget < 10_000:
            raise ConfigError("prx_budget must be at least 10000")

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def realizations(self, which):
        if self.n_realizations is not None:
            return self.n_realizations
        return 40 if which == "learning" else 50

    def methods_for(self, which):
        methods = self.methods or DEFAULT_METHODS[which]
        if which != "learning":
            bad = [m for m in methods if m not in PREDICTORS]
            if bad:
                raise ConfigError(f"{which} supports methods {', '.join(PREDICTORS)}, got {bad}")
        return methods

    @property
    def noise_dBm(self):
        if self.W_dBm is not None:
            return float(self.W_dBm)
        return float(np.median(self.field.path_loss(make_grid(self.field)))) - 10.0

    @property
    def W_lin(self):
        """Receiver noise power in mW."""
        return 10.0 ** (self.noise_dBm / 10.0)


@dataclass(frozen=True)
class MetricRow:
    method: str
    sweep_name: str
    sweep_value: float
    metric: str
    mean: float
    std: float
    n: int

    def to_csv_row(self):
        return [self.method, self.sweep_name, repr(float(self.sweep_value)), self.metric,
                repr(float(self.mean)), repr(float(self.std)), str(self.n)]


@dataclass
class ExperimentResult:
    """Aggregated rows plus the per-realization records they came from."""

    which: str
    rows: list
    records: list = field(default_factory=list)
    failures: list = field(default_factory=list)

    def table(self, method, metric, sweep_name=None):
        """``{sweep_value: mean}`` for one method and metric."""
        return {r.sweep_value: r.mean for r in self.rows
                if r.method == method and r.metric == metric and (sweep_name is None or r.sweep_name == sweep_name)}


# --------------------------------------------------------------------------
# shared pieces


def realization_field(cfg: ExperimentConfig, r):
    """Channel field of realization ``r``."""
    return generate_shadowing_field(cfg.field, stream(cfg.master_seed, r, FIELD))


def realization_training_set(cfg: ExperimentConfig, field_: ChannelField, r, lam):
    """Training set of realization ``r`` at mean location error ``lam``."""
    # unit-mean exponential draws scaled by lambda: common random numbers across the sweep
    unit = draw_location_errors(cfg.n_train, 1.0, stream(cfg.master_seed, r, ERRORS, 0))
    return make_training_set(field_, cfg.n_train, lam * unit, stream(cfg.master_seed, r, TRAIN),
                             stream(cfg.master_seed, r, ERRORS, 1))


def _training_mask(field_, data):
    mask = np.ones(len(field_), dtype=bool)
    d = np.linalg.norm(field_.grid[:, None, :] - data.hidden_truth[None, :, :], axis=-1)
    mask[np.argmin(d, axis=0)] = False
    return mask


def learn_method(method, data, cfg: ExperimentConfig, sigma_proc, rng_mc):
    """Dispatch to the learner of ``method`` (one of the model kinds)."""
    f = cfg.field
    if method == "cGP":
        return learn_cgp(data, f.sigma_n, f.L0)
    if method == "cGP-no-proc":
        return learn_cgp(data, f.sigma_n, f.L0, estimate_proc=False)
    if method == "uGP":
        return learn_ugp(data, f.sigma_n, f.L0, sigma_proc)
    if method == "uGP-proc":
        return learn_ugp(data, f.sigma_n, f.L0, sigma_proc, estimate_proc=True)
    if method == "GAGP":
        return learn_gagp(data, f.sigma_n, f.L0, sigma_proc)
    if method == "MCGP":
        return learn_mcgp(data, f.sigma_n, f.L0, M=cfg.M, rng=rng_mc)
    raise ConfigError(f"unknown method {method!r}")


def _predict(method, models, data, u_star, cfg: ExperimentConfig, rng_mc):
    if method == "cGP":
        return predict_cgp(models["cGP"], data, u_star)
    if method == "uGP":
        return predict_ugp(models["uGP"], data, u_star)
    if method == "MCGP":
        # Monte Carlo prediction on top of the classical hyperparameters
        return predict_mcgp(models["cGP"], data, u_star, M=cfg.M, rng=rng_mc)
    raise ConfigError(f"method {method!r} has no predictor")


def _models_for(methods, data, cfg, sigma_proc, r, failures, which, sweep_name, sweep_value):
    needed = {"cGP"} if "MCGP" in methods else set()
    needed |= {m for m in methods if m in ("cGP", "uGP")}
    models = {}
    for m in sorted(needed):
        try:
            models[m] = learn_method(m, data, cfg, sigma_proc, None)
        except Exception as exc:  # a failed cell is recorded and skipped
            failures.append(_failure(which, m, sweep_name, sweep_value, r, exc))
    return models


def _failure(which, method, sweep_name, sweep_value, r, exc):
    logger.warning("%s %s %s=%g realization %d failed: %s", which, method, sweep_name, sweep_value, r, exc)
    logger.debug("".join(traceback.format_exception(exc)))
    return (which, method, sweep_name, float(sweep_value), r, f"{type(exc).__name__}: {exc}")


def compute_prx_avg(field_: ChannelField, u_star, budget=10_000, rng=None):
    """Monte Carlo average of the true received power over each test belief.

    Draws falling outside the field extent are rejected and redrawn.

    Returns
    -------
    mean, stderr : ndarray
        One entry per test input (floats for a single input).

    Raises
    ------
    DomainError
        If more than half of the draws for some input had to be rejected.
    """
    if budget < 10_000:
        raise ValueError("budget must be at least 10000")
    single = not isinstance(u_star, Locations)
    U = Locations.coerce(u_star)
    rng = np.random.default_rng(rng)
    cfg = field_.config
    lo, hi = np.asarray(cfg.extent_min), np.asarray(cfg.extent_max)
    if U.is_exact:
        mean = np.atleast_1d(received_power_at(field_, U.z))
        stderr = np.zeros(len(U))
    else:
        x = U.sample(rng, size=budget)
        rejected = np.zeros(len(U), dtype=np.int64)
        outside = np.any((x < lo) | (x > hi), axis=-1)
        while np.any(outside):
            rejected += outside.sum(axis=0)
            if np.any(rejected > budget):
                raise DomainError("more than half of the draws fall outside the field extent")
            redraw = U.sample(rng, size=budget)
            x[outside] = redraw[outside]
            outside = np.any((x < lo) | (x > hi), axis=-1)
        p = received_power_at(field_, x.reshape(-1, U.dim)).reshape(budget, len(U))
        mean = p.mean(axis=0)
        stderr = p.std(axis=0, ddof=1) / np.sqrt(budget)
    if single:
        return float(mean[0]), float(stderr[0])
    return mean, stderr


def prediction_test_points(cfg: ExperimentConfig):
    """Grid points at least ``test_margin`` inside the extent, every ``test_spacing`` meters."""
    grid = make_grid(cfg.field)
    lo = np.asarray(cfg.field.extent_min) + cfg.test_margin
    hi = np.asarray(cfg.field.extent_max) - cfg.test_margin
    inside = np.all((grid >= lo - 1e-9) & (grid <= hi + 1e-9), axis=1)
    steps = (grid - lo) / cfg.test_spacing
    on_lattice = np.all(np.abs(steps - np.round(steps)) < 1e-9, axis=1)
    pts = grid[inside & on_lattice]
    if len(pts) == 0:
        raise ConfigError("no test locations: margin/spacing leave nothing inside the extent")
    if cfg.n_test is not None and cfg.n_test < len(pts):
        pts = pts[np.round(np.linspace(0, len(pts) - 1, cfg.n_test)).astype(int)]
    return pts


def rate(power_dBm, noise_dBm):
    """Supported rate ``log2(1 + SNR)`` in bits per channel use (never negative)."""
    return np.log2(1.0 + 10.0 ** ((np.asarray(power_dBm) - noise_dBm) / 10.0))


def allocation_metrics(mean, std, true_power, alpha, noise_dBm):
    """Mean effective rate and undelivered-bit fraction of an allocation.

    The allocated rate uses the power ``mean - alpha * std``; the effective
    rate is capped by the rate the true power supports.
    """
    r_alloc = rate(np.asarray(mean) - alpha * np.asarray(std), noise_dBm)
    r_true = rate(true_power, noise_dBm)
    r_eff = np.minimum(r_alloc, r_true)
    total = float(np.sum(r_alloc))
    undelivered = float(np.sum(r_alloc - r_eff)) / total if total > 0 else 0.0
    return float(np.mean(r_eff)), undelivered


# --------------------------------------------------------------------------
# per-realization workers


def _learning_worker(args):
    cfg, r, sigma_proc = args
    which, sweep = "learning", "lambda"
    methods = cfg.methods_for(which)
    records, failures = [], []
    field_ = realization_field(cfg, r)
    for k, lam in enumerate(cfg.lambda_sweep):
        data = realization_training_set(cfg, field_, r, lam)
        for m in methods:
            try:
                model = learn_method(m, data, cfg, sigma_proc, stream(cfg.master_seed, r, MC, k, 0))
            except Exception as exc:
                failures.append(_failure(which, m, sweep, lam, r, exc))
                continue
            t = model.theta
            for metric, v in (("d_c_hat", t.d_c), ("sigma_psi_hat", t.sigma_psi),
                              ("sigma_proc_hat", t.sigma_proc), ("eta_hat", t.eta)):
                records.append((m, sweep, lam, metric, r, float(v)))
    return records, failures


def _pred_train_worker(args):
    cfg, r, sigma_proc = args
    which, sweep = "pred-train", "lambda"
    methods = cfg.methods_for(which)
    records, failures = [], []
    field_ = realization_field(cfg, r)
    for k, lam in enumerate(cfg.lambda_sweep):
        data = realization_training_set(cfg, field_, r, lam)
        idx = np.flatnonzero(_training_mask(field_, data))
        if cfg.n_test is not None and cfg.n_test < len(idx):
            idx = np.sort(stream(cfg.master_seed, r, TEST, k).choice(idx, cfg.n_test, replace=False))
        X, truth = field_.grid[idx], field_.power[idx]
        models = _models_for(methods, data, cfg, sigma_proc, r, failures, which, sweep, lam)
        for m in methods:
            if m not in models and not (m == "MCGP" and "cGP" in models):
                continue
            try:
                post = _predict(m, models, data, X, cfg, stream(cfg.master_seed, r, MC, k, 1))
            except Exception as exc:
                failures.append(_failure(which, m, sweep, lam, r, exc))
                continue
            records.append((m, sweep, lam, "mse", r, float(np.mean((post.mean - truth) ** 2))))
    return records, failures


def _pred_test_worker(args):
    cfg, r, sigma_proc = args
    which, sweep = "pred-test", "sigma"
    methods = cfg.methods_for(which)
    records, failures = [], []
    field_ = realization_field(cfg, r)
    data = realization_training_set(cfg, field_, r, 0.0)
    Z = prediction_test_points(cfg)
    models = _models_for(methods, data, cfg, sigma_proc, r, failures, which, sweep, cfg.sigma_sweep[0])
    for k, s in enumerate(cfg.sigma_sweep):
        U = Locations.isotropic(Z, s)
        target, _ = compute_prx_avg(field_, U, cfg.prx_budget, stream(cfg.master_seed, r, TEST, k))
        for m in methods:
            if m not in models and not (m == "MCGP" and "cGP" in models):
                continue
            try:
                post = _predict(m, models, data, U, cfg, stream(cfg.master_seed, r, MC, k, 1))
            except Exception as exc:
                failures.append(_failure(which, m, sweep, s, r, exc))
                continue
            records.append((m, sweep, s, "mse", r, float(np.mean((post.mean - target) ** 2))))
    return records, failures


def _resource_worker(args):
    cfg, r, sigma_proc = args
    which = "resource"
    methods = cfg.methods_for(which)
    records, failures = [], []
    field_ = realization_field(cfg, r)
    noise = cfg.noise_dBm
    X, truth = field_.grid, field_.power
    for lam in cfg.resource_lambdas:
        sweep = f"alpha[lambda={lam:g}]"
        k = cfg.lambda_sweep.index(lam) if lam in cfg.lambda_sweep else len(cfg.lambda_sweep)
        data = realization_training_set(cfg, field_, r, lam)
        models = _models_for(methods, data, cfg, sigma_proc, r, failures, which, sweep, lam)
        posts = {"oracle": (truth, np.zeros_like(truth))}
        for m in methods:
            if m not in models and not (m == "MCGP" and "cGP" in models):
                continue
            try:
                post = _predict(m, models, data, X, cfg, stream(cfg.master_seed, r, MC, k, 1))
            except Exception as exc:
                failures.append(_failure(which, m, sweep, lam, r, exc))
                continue
            posts[m] = (post.mean, post.std)
        for m, (mean, std) in posts.items():
            for a in cfg.alpha_sweep:
                r_eff, frac = allocation_metrics(mean, std, truth, a, noise)
                records.append((m, sweep, a, "r_eff", r, r_eff))
                records.append((m, sweep, a, "undelivered_frac", r, frac))
    return records, failures


WORKERS = {
    "learning": _learning_worker,
    "pred-train": _pred_train_worker,
    "pred-test": _pred_test_worker,
    "resource": _resource_worker,
}
SWEEP_NAMES = {"learning": "lambda", "pred-train": "lambda", "pred-test": "sigma"}


# --------------------------------------------------------------------------
# driver


def default_workers():
    env = os.environ.get("UGP_WORKERS")
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ConfigError(f"UGP_WORKERS must be an integer, got {env!r}") from None
        if n < 1:
            raise ConfigError("UGP_WORKERS must be at least 1")
        return n
    return os.cpu_count() or 1


def resolve_sigma_proc(cfg: ExperimentConfig, which):
    """Offline process noise for the uncertain-input learners, calibrating if needed."""
    uses = {"uGP", "uGP-proc", "GAGP"} & set(cfg.methods_for(which))
    if not uses:
        return 0.0
    if cfg.sigma_proc_offline is not None:
        return float(cfg.sigma_proc_offline)
    logger.info("calibrating offline sigma_proc over %d realizations", cfg.n_calibration)
    seed = np.random.SeedSequence(cfg.master_seed, spawn_key=(2**31,)).generate_state(1)[0]
    return calibrate_sigma_proc_offline(cfg.field, cfg.n_calibration, cfg.n_train, seed=int(seed))


def aggregate(records):
    """Reduce per-realization records to sorted mean/std rows.

    Records are ordered by realization before reduction, so the result is
    bit-identical whatever order they arrived in.
    """
    groups = {}
    for method, sweep_name, sweep_value, metric, r, v in sorted(records, key=lambda t: (t[:4], t[4])):
        groups.setdefault((method, sweep_name, float(sweep_value), metric), []).append(v)
    rows = []
    for (method, sweep_name, sweep_value, metric), vals in sorted(groups.items()):
        vals = np.asarray(vals, dtype=float)
        std = float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0
        rows.append(MetricRow(method, sweep_name, sweep_value, metric, float(np.mean(vals)), std, len(vals)))
    return rows


def run_experiment(which, cfg: ExperimentConfig, workers=1, out_dir=None, sigma_proc=None):
    """Run one study over all realizations and optionally write its CSVs.

    With ``out_dir`` the per-realization records are appended to
    ``<which>_raw.csv`` as each realization completes, failures go to
    ``failures.csv`` and the aggregated rows to ``<which>.csv``.
    """
    if which not in WORKERS:
        raise ConfigError(f"unknown experiment {which!r}; choose from {', '.join(WORKERS)}")
    if sigma_proc is None:
        sigma_proc = resolve_sigma_proc(cfg, which)
    n = cfg.realizations(which)
    tasks = [(cfg, r, sigma_proc) for r in range(n)]
    worker = WORKERS[which]
    records, failures = [], []
    raw_fh = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        raw_fh = (out_dir / f"{which}_raw.csv").open("w", newline="", encoding="utf-8")
        csv.writer(raw_fh, lineterminator="\n").writerow(CSV_HEADER_RAW)
    try:
        if workers > 1 and n > 1:
            with ProcessPoolExecutor(max_workers=min(workers, n)) as pool:
                results = pool.map(worker, tasks)
                for rec, fail in results:
                    _collect(rec, fail, records, failures, raw_fh)
        else:
            for task in tasks:
                _collect(*worker(task), records, failures, raw_fh)
    finally:
        if raw_fh is not None:
            raw_fh.close()
    rows = aggregate(records)
    if out_dir is not None:
        write_metric_csv(rows, out_dir / f"{which}.csv")
        write_failures(failures, out_dir / "failures.csv", which)
    return ExperimentResult(which, rows, sorted(records, key=lambda t: (t[:4], t[4])), failures)


def _collect(rec, fail, records, failures, raw_fh):
    records.extend(rec)
    failures.extend(fail)
    if raw_fh is not None:
        w = csv.writer(raw_fh, lineterminator="\n")
        for method, sweep_name, sweep_value, metric, r, v in rec:
            w.writerow([method, sweep_name, repr(float(sweep_value)), metric, r, repr(float(v))])
        raw_fh.flush()


def write_failures(failures, path, which):
    """Rewrite ``path`` keeping other experiments' rows and replacing ``which``'s."""
    path = Path(path)
    keep = []
    if path.exists():
        with path.open(encoding="utf-8") as fh:
            keep = [row for row in list(csv.reader(fh))[1:] if row and row[0] != which]
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER_FAILURE)
        w.writerows(keep)
        for f in sorted(failures, key=lambda t: t[:5]):
            w.writerow([f[0], f[1], f[2], repr(f[3]), f[4], f[5]])


def write_metric_csv(rows, path):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER_METRIC)
        for row in rows:
            w.writerow(row.to_csv_row())


def run_learning_sweep(cfg: ExperimentConfig, workers=1, out_dir=None, sigma_proc=None):
    """Hyperparameter estimates per method against the mean location error."""
    return run_experiment("learning", cfg, workers, out_dir, sigma_proc)


def run_prediction_uncertain_training(cfg: ExperimentConfig, workers=1, out_dir=None, sigma_proc=None):
    """MSE at exact test points (all non-training grid points) with uncertain training."""
    return run_experiment("pred-train", cfg, workers, out_dir, sigma_proc)


def run_prediction_uncertain_test(cfg: ExperimentConfig, workers=1, out_dir=None, sigma_proc=None):
    """MSE against the location-averaged true power, exact training, uncertain tests."""
    return run_experiment("pred-test", cfg, workers, out_dir, sigma_proc)


def run_resource_allocation(cfg: ExperimentConfig, workers=1, out_dir=None, sigma_proc=None):
    """Effective rate and undelivered-bit fraction against the confidence parameter."""
    return run_experiment("resource", cfg, workers, out_dir, sigma_proc)
