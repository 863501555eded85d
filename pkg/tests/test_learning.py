import numpy as np
import pytest

from ugp import learning
from ugp.exceptions import DegenerateDataError, RankError
from ugp.field import FieldConfig, Locations, draw_location_errors, generate_shadowing_field
from ugp.kernels import Hyperparameters, correlation_classical, gram_classical, gram_expected, mean_variance
from ugp.learning import (
    D_C_GRID,
    _MCGPObjective,
    _spectral_grid_nll,
    calibrate_sigma_proc_offline,
    estimate_eta_ls,
    gagp_delta,
    learn_cgp,
    learn_gagp,
    learn_mcgp,
    learn_ugp,
    nll,
)
from ugp.model import LearnedModel, TrainingSet, make_training_set

CFG = FieldConfig()


def dataset(seed, lam=0.0, n=100, config=CFG):
    f = generate_shadowing_field(config, np.random.default_rng(seed))
    sig = draw_location_errors(n, lam, np.random.default_rng(seed + 10_000))
    return make_training_set(f, n, sig, np.random.default_rng(seed + 20_000))


def budget_identity(model: LearnedModel):
    t = model.theta
    return t.sigma_psi**2 + t.sigma_proc**2 + t.sigma_n**2, model.sigma_tot**2


class TestEstimateEta:
    def test_exact_linear_model(self):
        z = np.linspace(20, 200, 30)
        y = -10.0 - 25.0 * np.log10(z)
        eta, resid = estimate_eta_ls(TrainingSet(Locations.exact(z), y), -10.0)
        assert eta == pytest.approx(2.5, rel=1e-14)
        np.testing.assert_allclose(resid, 0.0, atol=1e-12)

    def test_expected_regressor_equals_classical_for_exact_inputs(self):
        data = dataset(1)
        a = estimate_eta_ls(data, -10.0, "classical")
        b = estimate_eta_ls(data, -10.0, "expected")
        assert a[0] == b[0]
        np.testing.assert_array_equal(a[1], b[1])

    def test_rank_error(self):
        # log10 of unit distance vanishes, so the regressor is zero
        with pytest.raises(RankError):
            estimate_eta_ls(TrainingSet(Locations.exact(np.array([1.0, -1.0])), np.array([0.0, 1.0])), 0.0)

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            estimate_eta_ls(dataset(1), -10.0, "other")

    def test_mean_over_realizations(self):
        etas = [estimate_eta_ls(dataset(100 + r), CFG.L0)[0] for r in range(40)]
        assert abs(np.mean(etas) - 2.5) <= 0.15


class TestNLL:
    def test_identity_zero_residual(self):
        assert nll(np.zeros(4), np.eye(4)) == pytest.approx(0.0, abs=1e-12)

    def test_scaled_identity(self):
        r = np.array([1.0, -2.0, 0.5])
        c = 1.7
        assert nll(r, c * np.eye(3)) == pytest.approx(3 * np.log(c) + r @ r / c)
        cs = np.linspace(0.1, 5, 2000)
        best = cs[np.argmin([nll(r, c * np.eye(3)) for c in cs])]
        assert best == pytest.approx(r @ r / 3, abs=cs[1] - cs[0])

    def test_dense_oracle(self):
        rng = np.random.default_rng(2)
        A = rng.normal(size=(5, 5))
        K = A @ A.T + 0.5 * np.eye(5)
        r = rng.normal(size=5)
        direct = np.log(np.linalg.det(K)) + r @ np.linalg.inv(K) @ r
        assert nll(r, K) == pytest.approx(direct, rel=1e-10)

    def test_permutation_invariant(self):
        data = dataset(3)
        th = Hyperparameters(sigma_proc=1.0, d_c=12.0)
        _, resid = estimate_eta_ls(data, CFG.L0)
        K = gram_classical(data.z, th) + th.sigma_n**2 * np.eye(len(data))
        perm = np.random.default_rng(0).permutation(len(data))
        assert nll(resid[perm], K[np.ix_(perm, perm)]) == pytest.approx(nll(resid, K), rel=1e-12)

    def test_spectral_grid_matches_cholesky(self):
        data = dataset(4)
        _, resid = estimate_eta_ls(data, CFG.L0)
        R = correlation_classical(data.z, data.z, 12.0, 1)
        sig = np.array([3.0, 7.0, 9.5])
        proc = np.array([2.0, 0.5, 0.0])
        fast = _spectral_grid_nll(resid, R, sig, proc, CFG.sigma_n)
        for k in range(3):
            K = sig[k] ** 2 * R + (proc[k] ** 2 + CFG.sigma_n**2) * np.eye(len(data))
            assert fast[k] == pytest.approx(nll(resid, K), rel=1e-9)


class TestLearnCGP:
    def test_budget_identity(self):
        for kind in (True, False):
            m = learn_cgp(dataset(5, lam=3.0), CFG.sigma_n, CFG.L0, estimate_proc=kind)
            if kind:
                lhs, rhs = budget_identity(m)
                assert lhs == pytest.approx(rhs, rel=1e-6)
            else:
                assert m.theta.sigma_proc == 0.0 and m.kind == "cGP-no-proc"

    def test_estimates_in_grid(self):
        m = learn_cgp(dataset(6), CFG.sigma_n, CFG.L0)
        assert D_C_GRID[0] <= m.theta.d_c <= D_C_GRID[-1]
        assert m.kind == "cGP" and m.theta.p == 1
        assert m.diagnostics["nll"].shape == (len(D_C_GRID), learning.N_SIGMA_GRID)

    def test_recovers_truth_at_zero_error(self):
        est = np.array([
            (m.theta.d_c, m.theta.sigma_psi)
            for m in (learn_cgp(dataset(300 + r, n=200), CFG.sigma_n, CFG.L0) for r in range(40))
        ])
        d_c, s_psi = est.mean(axis=0)
        assert 10.0 <= d_c <= 20.0
        assert 8.5 <= s_psi <= 11.5

    def test_degenerate(self):
        z = np.linspace(20, 200, 10)
        data = TrainingSet(Locations.exact(z), -10.0 - 25.0 * np.log10(z))
        with pytest.raises(DegenerateDataError):
            learn_cgp(data, 0.01, -10.0)

    def test_permutation_invariant(self):
        data = dataset(7, lam=2.0)
        perm = np.random.default_rng(1).permutation(len(data))
        a = learn_cgp(data, CFG.sigma_n, CFG.L0).theta
        b = learn_cgp(data.permuted(perm), CFG.sigma_n, CFG.L0).theta
        assert a.d_c == b.d_c
        assert a.sigma_psi == pytest.approx(b.sigma_psi, rel=1e-12)
        assert a.eta == pytest.approx(b.eta, rel=1e-12)


class TestLearnUGP:
    def test_budget_identity(self):
        for proc in (False, True):
            m = learn_ugp(dataset(8, lam=4.0), CFG.sigma_n, CFG.L0, 2.0, estimate_proc=proc)
            lhs, rhs = budget_identity(m)
            assert lhs == pytest.approx(rhs, rel=1e-6)
            assert m.theta.p == 2

    def test_exact_inputs_reduce_to_squared_exponential_cgp(self):
        data = dataset(9)
        u = learn_ugp(data, CFG.sigma_n, CFG.L0, 0.0, estimate_proc=True)
        c = learn_cgp(data, CFG.sigma_n, CFG.L0, estimate_proc=True, p=2)
        assert (u.theta.d_c, u.theta.sigma_psi, u.theta.sigma_proc) == (c.theta.d_c, c.theta.sigma_psi, c.theta.sigma_proc)

    def test_degenerate(self):
        data = dataset(10)
        with pytest.raises(DegenerateDataError):
            learn_ugp(data, CFG.sigma_n, CFG.L0, 1e3)

    def test_proc_variant_trades_shadowing_for_process_noise(self):
        rows = []
        for r in range(10):
            data = dataset(500 + r, lam=4.0)
            a = learn_ugp(data, CFG.sigma_n, CFG.L0, 2.0).theta
            b = learn_ugp(data, CFG.sigma_n, CFG.L0, 2.0, estimate_proc=True).theta
            rows.append((a.sigma_psi, b.sigma_psi, b.sigma_proc, a.d_c, b.d_c))
        s_u, s_up, proc_up, dc_u, dc_up = np.mean(rows, axis=0)
        assert s_up <= s_u
        assert proc_up >= 2.0
        assert dc_up >= dc_u


class TestLearnGAGP:
    def test_exact_inputs_match_ugp(self):
        data = dataset(11)
        g = learn_gagp(data, CFG.sigma_n, CFG.L0, 2.0)
        u = learn_ugp(data, CFG.sigma_n, CFG.L0, 2.0)
        np.testing.assert_array_equal(g.diagnostics["delta"], 0.0)
        assert (g.theta.d_c, g.theta.sigma_psi, g.theta.sigma_proc) == (u.theta.d_c, u.theta.sigma_psi, u.theta.sigma_proc)

    def test_delta_zero_without_path_loss(self):
        data = dataset(12, lam=5.0)
        np.testing.assert_array_equal(gagp_delta(data, 0.0), 0.0)

    def test_delta_is_mean_variance(self):
        data = dataset(13, lam=3.0)
        np.testing.assert_allclose(gagp_delta(data, 2.5), mean_variance(data.inputs, Hyperparameters(eta=2.5)))

    def test_surface_is_cholesky_nll(self):
        data = dataset(14, lam=3.0)
        g = learn_gagp(data, CFG.sigma_n, CFG.L0, 2.0)
        k = 20
        t = g.theta
        K = t.sigma_psi**2 * gram_expected(data.inputs, Hyperparameters(d_c=D_C_GRID[k], sigma_psi=1.0, p=2))
        K[np.diag_indices_from(K)] += t.sigma_n**2 + t.sigma_proc**2 + g.diagnostics["delta"]
        assert g.diagnostics["nll"][k] == pytest.approx(nll(g.residuals, K), rel=1e-12)


class TestLearnMCGP:
    def test_objective_at_zero_error_is_half_cgp_nll(self):
        data = dataset(15)
        obj = _MCGPObjective(data, CFG.sigma_n, CFG.L0, 300, np.random.default_rng(0))
        th = Hyperparameters(sigma_proc=1.2, d_c=11.0, eta=2.4, sigma_psi=8.0)
        resid = data.y - CFG.L0 + 10 * th.eta * np.log10(data.z[:, 0])
        K = gram_classical(data.z, th) + th.sigma_n**2 * np.eye(len(data))
        f = obj([th.eta, np.log(th.d_c), np.log(th.sigma_psi), th.sigma_proc])
        assert f == pytest.approx(0.5 * nll(resid, K) + 0.5 * len(data) * np.log(2 * np.pi), rel=1e-12)

    def test_single_sample_is_cgp_nll_on_that_sample(self):
        data = dataset(16, lam=4.0)
        obj = _MCGPObjective(data, CFG.sigma_n, CFG.L0, 1, np.random.default_rng(3))
        X = data.inputs.sample(np.random.default_rng(3), size=1)[0]
        th = Hyperparameters(sigma_proc=0.5, d_c=9.0, eta=2.6, sigma_psi=9.0)
        resid = data.y - CFG.L0 + 10 * th.eta * np.log10(np.abs(X[:, 0]))
        K = gram_classical(X, th) + th.sigma_n**2 * np.eye(len(data))
        f = obj([th.eta, np.log(th.d_c), np.log(th.sigma_psi), th.sigma_proc])
        assert f == pytest.approx(0.5 * nll(resid, K) + 0.5 * len(data) * np.log(2 * np.pi), rel=1e-10)

    def test_zero_error_matches_cgp(self):
        for r in range(5):
            data = dataset(600 + r)
            c = learn_cgp(data, CFG.sigma_n, CFG.L0)
            m = learn_mcgp(data, CFG.sigma_n, CFG.L0, M=300, rng=0)
            assert m.converged and m.diagnostics["n_samples"] == 1
            ct, mt = c.theta, m.theta
            obj = _MCGPObjective(data, CFG.sigma_n, CFG.L0, 1, None)
            gap = obj([ct.eta, np.log(ct.d_c), np.log(ct.sigma_psi), ct.sigma_proc]) - m.diagnostics["objective"]
            assert -1e-9 <= gap <= 1.0
            assert 1 / 1.35 <= mt.d_c / ct.d_c <= 1.35
            assert mt.sigma_psi == pytest.approx(ct.sigma_psi, rel=0.15)
            assert abs(mt.eta - ct.eta) <= 0.2

    def test_deterministic_given_seed(self):
        data = dataset(17, lam=3.0, n=30)
        a = learn_mcgp(data, CFG.sigma_n, CFG.L0, M=20, rng=5).theta
        b = learn_mcgp(data, CFG.sigma_n, CFG.L0, M=20, rng=5).theta
        assert a == b

    def test_non_convergence_flag(self, monkeypatch):
        monkeypatch.setattr(learning, "MCGP_MAX_ITER", 3)
        data = dataset(18, lam=3.0, n=30)
        m = learn_mcgp(data, CFG.sigma_n, CFG.L0, M=10, rng=0)
        assert not m.converged
        assert np.isfinite(m.diagnostics["objective"])
        assert m.to_csv_row()[-1] == "False"

    def test_invalid_sample_count(self):
        with pytest.raises(ValueError):
            learn_mcgp(dataset(19), CFG.sigma_n, CFG.L0, M=0)


class TestCalibrateSigmaProc:
    def test_matched_model_has_no_mismatch(self):
        s = calibrate_sigma_proc_offline(CFG, n_realizations=10, seed=1, truth_p=2)
        assert s <= 0.1 * CFG.sigma_psi

    def test_mismatch_positive_and_repeatable(self):
        a = calibrate_sigma_proc_offline(CFG, n_realizations=40, seed=2)
        b = calibrate_sigma_proc_offline(CFG, n_realizations=40, seed=3)
        assert a > 0 and b > 0
        assert abs(a - b) <= 0.15 * max(a, b)

    def test_deterministic(self):
        assert calibrate_sigma_proc_offline(CFG, 3, seed=4) == calibrate_sigma_proc_offline(CFG, 3, seed=4)


def test_learned_model_csv_row():
    m = learn_cgp(dataset(20), CFG.sigma_n, CFG.L0)
    row = m.to_csv_row()
    assert row[0] == "cGP" and float(row[2]) == m.theta.d_c and row[-1] == "True"
    with pytest.raises(ValueError):
        LearnedModel("nope", m.theta, m.residuals, m.sigma_tot)
