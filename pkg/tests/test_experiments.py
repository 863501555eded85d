import csv
import random

import numpy as np
import pytest

from ugp.exceptions import ConfigError, DomainError
from ugp.experiments import (
    CSV_HEADER_FAILURE,
    CSV_HEADER_METRIC,
    ExperimentConfig,
    aggregate,
    allocation_metrics,
    compute_prx_avg,
    default_workers,
    prediction_test_points,
    rate,
    run_experiment,
    run_learning_sweep,
    run_prediction_uncertain_test,
    run_prediction_uncertain_training,
    run_resource_allocation,
    write_failures,
)
from ugp.field import ChannelField, FieldConfig, Locations, make_grid, received_power_at

SMALL = FieldConfig(extent_min=(20.0,), extent_max=(120.0,), resolution=1.0)


def small_cfg(**kw):
    base = dict(field=SMALL, n_train=30, n_realizations=2, M=20, sigma_proc_offline=2.0,
                lambda_sweep=(0.0, 4.0), sigma_sweep=(0.0, 3.0), alpha_sweep=(0.0, 1.0, 3.0),
                resource_lambdas=(0.0, 4.0))
    base.update(kw)
    return ExperimentConfig(**base)


def synthetic_field(config, power):
    from ugp.field import _lattice

    grid = make_grid(config)
    p = power(grid[:, 0])
    _, idx = _lattice((config.extent_min, config.extent_max, config.resolution))
    return ChannelField(config, grid, p - config.path_loss(grid), p, idx)


def read_csv(path):
    with open(path, encoding="utf-8") as fh:
        return list(csv.reader(fh))


class TestExperimentConfig:
    @pytest.mark.parametrize(
        "kwargs",
        [
            {"lambda_sweep": ()},
            {"lambda_sweep": (4.0, 2.0)},
            {"sigma_sweep": (-1.0, 0.0)},
            {"methods": ("cGP", "bogus")},
            {"n_train": 1},
            {"n_realizations": 0},
            {"M": 0},
            {"prx_budget": 100},
        ],
    )
    def test_invalid(self, kwargs):
        with pytest.raises(ConfigError):
            ExperimentConfig(**kwargs)

    def test_default_counts(self):
        cfg = ExperimentConfig()
        assert cfg.realizations("learning") == 40
        assert cfg.realizations("pred-test") == 50
        assert cfg.M == 300

    def test_prediction_studies_reject_learning_only_kinds(self):
        with pytest.raises(ConfigError):
            ExperimentConfig(methods=("GAGP",)).methods_for("pred-train")

    def test_noise_sets_median_snr_to_10_db(self):
        cfg = ExperimentConfig()
        snr = cfg.field.path_loss(make_grid(cfg.field)) - cfg.noise_dBm
        assert np.median(snr) == pytest.approx(10.0)
        assert cfg.W_lin == pytest.approx(10 ** (cfg.noise_dBm / 10))
        assert ExperimentConfig(W_dBm=-90.0).noise_dBm == -90.0


class TestComputePrxAvg:
    def test_exact_input(self, default_field):
        u = Locations.exact(np.array([57.3]))
        mean, se = compute_prx_avg(default_field, u)
        assert mean[0] == received_power_at(default_field, 57.3) and se[0] == 0.0

    def test_constant_field(self):
        f = synthetic_field(SMALL, lambda x: np.full_like(x, -55.0))
        mean, _ = compute_prx_avg(f, Locations.isotropic(np.array([[60.0], [90.0]]), 5.0), rng=0)
        np.testing.assert_array_equal(mean, -55.0)

    def test_linear_field(self):
        cfg = FieldConfig(extent_min=(20.0,), extent_max=(120.0,), resolution=0.01)
        f = synthetic_field(cfg, lambda x: -40.0 - 0.2 * x)
        z = 70.0
        mean, se = compute_prx_avg(f, Locations.isotropic(np.array([[z]]), 6.0), budget=50_000, rng=1)
        assert abs(mean[0] - (-40.0 - 0.2 * z)) < 3 * se[0] + 0.2 * cfg.resolution

    def test_single_belief_returns_floats(self, default_field):
        from ugp.field import LocationDistribution

        mean, se = compute_prx_avg(default_field, LocationDistribution.isotropic([100.0], 2.0), rng=0)
        assert isinstance(mean, float) and se > 0

    def test_rejection_limit(self, default_field):
        with pytest.raises(DomainError):
            compute_prx_avg(default_field, Locations.isotropic(np.array([[20.0]]), 500.0), rng=0)

    def test_small_budget(self, default_field):
        with pytest.raises(ValueError):
            compute_prx_avg(default_field, Locations.exact(np.array([50.0])), budget=100)


class TestAllocation:
    def test_rate_nonnegative(self):
        assert rate(-500.0, -80.0) == 0.0
        assert rate(-80.0, -80.0) == pytest.approx(1.0)

    def test_oracle(self):
        p = np.linspace(-90, -40, 50)
        r_eff, frac = allocation_metrics(p, np.zeros_like(p), p, 0.0, -95.0)
        assert r_eff == pytest.approx(np.mean(rate(p, -95.0)))
        assert frac == 0.0

    def test_monotone_in_alpha_and_bounded(self):
        rng = np.random.default_rng(0)
        truth = rng.normal(-70, 8, 400)
        mean = truth + rng.normal(0, 4, 400)
        std = np.full(400, 4.0)
        r_ref = np.mean(rate(truth, -85.0))
        vals = [allocation_metrics(mean, std, truth, a, -85.0) for a in np.linspace(0, 3, 13)]
        r_eff, frac = np.array(vals).T
        assert np.all(np.diff(r_eff) <= 1e-12) and np.all(np.diff(frac) <= 1e-12)
        assert np.all((0 <= frac) & (frac < 1)) and np.all(r_eff <= r_ref + 1e-12)


class TestTestPoints:
    def test_default_points(self):
        pts = prediction_test_points(ExperimentConfig())
        assert pts[0, 0] == 40.0 and pts[-1, 0] == 180.0 and len(pts) == 71

    def test_subsampled(self):
        assert len(prediction_test_points(ExperimentConfig(n_test=10))) == 10

    def test_empty(self):
        with pytest.raises(ConfigError):
            prediction_test_points(small_cfg(test_margin=60.0))


class TestRunExperiment:
    def test_learning_cells(self, tmp_path):
        cfg = small_cfg(methods=("cGP", "uGP", "MCGP"))
        out = tmp_path / "new" / "dir"
        res = run_learning_sweep(cfg, out_dir=out)
        assert len({(r[0], r[2], r[4]) for r in res.records}) == 2 * 2 * 3
        assert read_csv(out / "learning.csv")[0] == CSV_HEADER_METRIC
        assert read_csv(out / "failures.csv") == [CSV_HEADER_FAILURE]
        raw = read_csv(out / "learning_raw.csv")
        assert len(raw) - 1 == len(res.records)
        for row in res.rows:
            assert row.n == 2 and row.std >= 0

    def test_failed_cells_recorded_not_zeroed(self, tmp_path):
        cfg = small_cfg(methods=("cGP", "uGP"), sigma_proc_offline=1e3)
        res = run_learning_sweep(cfg, out_dir=tmp_path)
        assert len(res.failures) == 4
        assert all(f[1] == "uGP" and "DegenerateDataError" in f[5] for f in res.failures)
        assert not res.table("uGP", "d_c_hat")
        assert len(read_csv(tmp_path / "failures.csv")) == 5

    def test_prediction_training(self):
        res = run_prediction_uncertain_training(small_cfg())
        mse = [r.mean for r in res.rows if r.metric == "mse"]
        assert mse and all(np.isfinite(mse)) and min(mse) >= 0
        assert {r.method for r in res.rows} == {"cGP", "uGP"}

    def test_prediction_test_degenerates_at_zero_sigma(self):
        res = run_prediction_uncertain_test(small_cfg(methods=("cGP", "MCGP")))
        c = res.table("cGP", "mse")
        m = res.table("MCGP", "mse")
        assert c[0.0] == m[0.0]
        assert set(c) == {0.0, 3.0}

    def test_resource_invariants(self):
        res = run_resource_allocation(small_cfg())
        for lam in (0, 4):
            name = f"alpha[lambda={lam}]"
            oracle_u = res.table("oracle", "undelivered_frac", name)
            assert all(v == 0.0 for v in oracle_u.values())
            r_ref = res.table("oracle", "r_eff", name)[0.0]
            for m in ("cGP", "uGP"):
                r = res.table(m, "r_eff", name)
                u = res.table(m, "undelivered_frac", name)
                assert all(v <= r_ref + 1e-12 for v in r.values())
                assert all(0 <= v < 1 for v in u.values())

    def test_serial_equals_parallel(self, tmp_path):
        cfg = small_cfg(n_realizations=3, methods=("cGP", "uGP"))
        run_experiment("pred-train", cfg, workers=1, out_dir=tmp_path / "a")
        run_experiment("pred-train", cfg, workers=2, out_dir=tmp_path / "b")
        for name in ("pred-train.csv", "failures.csv"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_unknown_experiment(self):
        with pytest.raises(ConfigError):
            run_experiment("nope", small_cfg())


class TestAggregate:
    def test_order_independent(self):
        recs = [("cGP", "lambda", float(l), "mse", r, float(l * 10 + r)) for l in range(3) for r in range(5)]
        shuffled = recs[:]
        random.Random(0).shuffle(shuffled)
        assert aggregate(recs) == aggregate(shuffled)

    def test_single_record_has_zero_std(self):
        (row,) = aggregate([("cGP", "lambda", 0.0, "mse", 0, 3.0)])
        assert row.std == 0.0 and row.n == 1


def test_write_failures_keeps_other_experiments(tmp_path):
    path = tmp_path / "failures.csv"
    write_failures([("learning", "uGP", "lambda", 0.0, 0, "E: x")], path, "learning")
    write_failures([("pred-train", "cGP", "lambda", 2.0, 1, "E: y")], path, "pred-train")
    write_failures([], path, "learning")
    rows = read_csv(path)
    assert rows[0] == CSV_HEADER_FAILURE and [r[0] for r in rows[1:]] == ["pred-train"]


def test_default_workers(monkeypatch):
    monkeypatch.setenv("UGP_WORKERS", "3")
    assert default_workers() == 3
    monkeypatch.setenv("UGP_WORKERS", "zero")
    with pytest.raises(ConfigError):
        default_workers()
    monkeypatch.delenv("UGP_WORKERS")
    assert default_workers() >= 1
