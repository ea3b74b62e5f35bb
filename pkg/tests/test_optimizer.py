import json
import math
import warnings

import numpy as np
import pytest
from conftest import random_instance

from bernstein_aft.data import Dataset, rescale, select_tau
from bernstein_aft.likelihood import LikelihoodWorkspace
from bernstein_aft.optimizer import (
    FitConfig,
    FitError,
    FitResult,
    SingularityWarning,
    alternate_fit,
    change_point_statistic,
    covariance_gamma,
    degree_select,
    fixed_point_p,
    kkt_residual,
    mable_aft,
    newton_gamma,
)
from bernstein_aft.simulation import Scheme, SimDesign, simulate_dataset


def kkt_ok(gamma, p, m, ds, tol=1e-6):
    psi = LikelihoodWorkspace(gamma, m, ds).psi(p)
    active = p > 1e-8
    return psi.max() <= 1 + tol and np.all(np.abs(psi[active] - 1) <= tol)


class TestFixedPoint:
    def test_degree_zero(self, rng):
        gamma, _, ds = random_instance(rng, n=5, m=0)
        res = fixed_point_p(gamma, 0, ds)
        np.testing.assert_array_equal(res.p, [1.0])
        assert res.converged and res.iterations <= 1

    def test_single_update_matches_formula(self, rng):
        gamma, p0, ds = random_instance(rng, n=7, m=4)
        ws = LikelihoodWorkspace(gamma, 4, ds)
        expected = p0 * ws.psi(p0)
        res = fixed_point_p(gamma, 4, ds, p0, fp_maxit=1)
        np.testing.assert_allclose(res.p, expected / expected.sum(), rtol=1e-13)
        assert expected.sum() == pytest.approx(1.0, abs=1e-12)

    @pytest.mark.parametrize("seed", range(6))
    def test_two_interior_starts_agree(self, seed):
        r = np.random.default_rng(seed)
        gamma, p0, ds = random_instance(r, n=6, m=3)
        q0 = r.dirichlet(np.ones(4))
        a = fixed_point_p(gamma, 3, ds, p0, fp_tol=1e-12, fp_maxit=100000)
        b = fixed_point_p(gamma, 3, ds, q0, fp_tol=1e-12, fp_maxit=100000)
        assert a.loglik == pytest.approx(b.loglik, abs=1e-6)

    @pytest.mark.parametrize("accelerate", [False, True])
    def test_monotone_trace(self, rng, accelerate):
        gamma, _, ds = random_instance(rng, n=30, m=9)
        res = fixed_point_p(gamma, 9, ds, accelerate=accelerate, keep_trace=True)
        assert np.all(np.diff(res.trace) >= -1e-10)
        assert res.converged
        assert kkt_ok(gamma, res.p, 9, ds)

    def test_simplex_preserved_each_iteration(self, rng):
        gamma, p, ds = random_instance(rng, n=15, m=6)
        for _ in range(50):
            p = fixed_point_p(gamma, 6, ds, p, fp_maxit=1).p
            assert abs(p.sum() - 1) <= 1e-12 and np.all(p >= 0)

    def test_accelerated_and_plain_agree(self, rng):
        gamma, _, ds = random_instance(rng, n=25, m=7)
        a = fixed_point_p(gamma, 7, ds, fp_tol=1e-12, fp_maxit=200000)
        b = fixed_point_p(gamma, 7, ds, fp_tol=1e-12, fp_maxit=200000, accelerate=True)
        assert a.loglik == pytest.approx(b.loglik, abs=1e-7)
        assert b.iterations < a.iterations

    def test_infeasible_start(self):
        ds = Dataset([0.0], [0.0], [0], np.zeros((1, 0)), tau=1.0, rescaled=True)
        with pytest.raises(FitError):
            fixed_point_p([], 1, ds, np.array([0.0, 1.0]))

    def test_bad_start_shape(self, rng):
        gamma, _, ds = random_instance(rng, n=5, m=3)
        with pytest.raises(ValueError):
            fixed_point_p(gamma, 3, ds, np.ones(3) / 3)


class TestNewton:
    def test_zero_covariates_unchanged(self, rng):
        _, p, ds = random_instance(rng, n=10, m=4, d=2)
        ds0 = ds.with_covariates(np.zeros_like(ds.x))
        res = newton_gamma(p, [0.2, -0.3], 4, ds0)
        np.testing.assert_array_equal(res.gamma, [0.2, -0.3])
        assert res.converged and res.grad_norm == 0.0

    def test_closed_form_stationary_point(self):
        # f(u) = 2(1-u), one exact y with x=1: l(gamma) = -gamma + log 2(1 - y e^-gamma),
        # concave with maximum at y e^-gamma = 1/2
        y = 0.3
        ds = Dataset([y], [y], [0], [[1.0]], tau=1.0, rescaled=True)
        res = newton_gamma(np.array([1.0, 0.0]), [math.log(y) + 0.5], 1, ds, newton_tol=1e-12)
        assert res.converged and res.iterations <= 8
        assert res.gamma[0] == pytest.approx(math.log(2 * y), abs=1e-10)

    def test_loglik_never_decreases(self, rng):
        # exact and left-censored rows keep a finite loglik for any gamma
        gamma, p, ds = random_instance(rng, n=20, m=6, kinds=("exact", "left"))
        start = LikelihoodWorkspace(gamma + 1.0, 6, ds).loglik(p)
        res = newton_gamma(p, gamma + 1.0, 6, ds)
        assert res.loglik >= start

    def test_case0_estimate_near_truth(self):
        design = SimDesign(100, Scheme.named("case0"), seed=11)
        data = simulate_dataset(design, 0)
        fit = mable_aft(data, FitConfig(tau=12.0, degree_min=3, degree_max=12))
        assert np.abs(fit.gamma - np.array([0.5, -0.5])).max() < 0.3


class TestAlternate:
    def test_zero_covariates(self, rng):
        _, _, ds = random_instance(rng, n=12, m=4, d=1)
        ds0 = ds.with_covariates(np.zeros_like(ds.x))
        res = alternate_fit(4, ds0, FitConfig(), gamma0=[0.7])
        np.testing.assert_array_equal(res.gamma, [0.7])
        assert res.outer_iterations == 1 and res.converged

    @pytest.mark.parametrize("seed", range(20))
    def test_outer_trace_monotone(self, seed):
        r = np.random.default_rng(1000 + seed)
        gamma, _, ds = random_instance(r, n=20, m=5, d=2)
        res = alternate_fit(5, ds, FitConfig(), gamma0=gamma)
        assert np.all(np.diff(res.trace) >= -1e-10)

    def test_case1_small_sample(self):
        design = SimDesign(30, Scheme.named("case1"), seed=5)
        data = rescale(select_tau(simulate_dataset(design, 0), 12.0))
        res = alternate_fit(8, data, FitConfig())
        assert res.converged
        assert kkt_ok(res.gamma, res.p, 8, data)

    def test_full_newton_option(self, rng):
        gamma, _, ds = random_instance(rng, n=25, m=5, d=2)
        res = alternate_fit(5, ds, FitConfig(newton_steps=None), gamma0=gamma)
        assert res.converged and kkt_ok(res.gamma, res.p, 5, ds)

    def test_warm_start_reaches_same_fit(self, rng):
        gamma, _, ds = random_instance(rng, n=25, m=5, d=2)
        cold = alternate_fit(5, ds, FitConfig(), gamma0=gamma)
        warm = alternate_fit(5, ds, FitConfig(warm_start=True), gamma0=gamma)
        assert warm.loglik == pytest.approx(cold.loglik, abs=1e-5)


class TestChangePoint:
    def test_hand_example(self):
        R, i_hat, notes = change_point_statistic([0, 1, 2, 4])
        assert R[0] == pytest.approx(3 * math.log(4 / 3) - 2 * math.log(1.5), abs=1e-12)
        assert R[1] == pytest.approx(3 * math.log(4 / 3) - math.log(2), abs=1e-12)
        assert R[2] == 0.0
        assert R[0] == pytest.approx(0.052116, abs=1e-6) and R[1] == pytest.approx(0.169899, abs=1e-6)
        assert i_hat == 2 and not notes

    def test_linear_increments_tie(self):
        R, i_hat, _ = change_point_statistic([0.0, 1.5, 3.0, 4.5, 6.0])
        np.testing.assert_allclose(R, 0.0, atol=1e-12)
        assert i_hat == 1

    def test_nonpositive_increments_guarded(self):
        R, i_hat, notes = change_point_statistic([0.0, -1.0, 2.0, 3.0])
        assert np.all(np.isfinite(R)) and notes
        assert 1 <= i_hat <= 3

    def test_too_short(self):
        with pytest.raises(ValueError):
            change_point_statistic([0.0, 1.0])

    def test_last_is_zero(self, rng):
        for _ in range(10):
            R, _, _ = change_point_statistic(np.cumsum(rng.exponential(size=8)))
            assert R[-1] == 0.0


class TestDegreeSelect:
    def test_trace_and_parallel_equivalence(self, rng):
        _, _, ds = random_instance(rng, n=30, m=5, d=1)
        cfg = FitConfig(degree_min=2, degree_max=7)
        fit1, m1, trace1, _ = degree_select(ds, cfg)
        fit2, m2, trace2, _ = degree_select(ds, FitConfig(degree_min=2, degree_max=7, workers=2))
        assert [t["m"] for t in trace1] == list(range(2, 8))
        assert trace1[0]["R"] is None and trace1[-1]["R"] == 0.0
        assert m1 == m2 and trace1 == trace2
        np.testing.assert_array_equal(fit1.p, fit2.p)


@pytest.fixture(scope="module")
def case2_data():
    return simulate_dataset(SimDesign(60, Scheme.named("case2"), seed=3), 0)


class TestMable:
    def test_result_invariants(self, case2_data):
        fit = mable_aft(case2_data, FitConfig(tau=12.0, degree_max=12))
        assert abs(fit.p.sum() - 1) <= 1e-12
        assert fit.diagnostics["kkt_residual"] <= 1e-6
        first = fit.degree_trace[0]["loglik"]
        chosen = next(t["loglik"] for t in fit.degree_trace if t["m"] == fit.degree)
        assert chosen >= first - 1e-9
        assert np.all(np.linalg.eigvalsh(fit.sigma_gamma) > 0)

    def test_time_rescaling_invariance(self, case2_data):
        c = 7.5
        scaled = Dataset(case2_data.y1 * c, case2_data.y2 * c, case2_data.delta, case2_data.x)
        a = mable_aft(case2_data, FitConfig(tau=12.0, degree_max=10))
        b = mable_aft(scaled, FitConfig(tau=12.0 * c, degree_max=10))
        np.testing.assert_allclose(a.gamma, b.gamma, atol=1e-6)
        assert a.degree == b.degree
        assert b.loglik == pytest.approx(a.loglik - np.sum(case2_data.delta == 0) * math.log(c), abs=1e-6)

    def test_zero_covariate_column(self, case2_data):
        x = case2_data.x.copy()
        x[:, 1] = 0.0
        data = case2_data.with_covariates(x, ("x1", "x2"))
        with pytest.warns(SingularityWarning):
            fit = mable_aft(data, FitConfig(tau=12.0, degree_max=8))
        assert fit.gamma[1] == 0.0

    def test_covariance_conventions(self, case2_data):
        data = rescale(select_tau(case2_data, 12.0))
        res = alternate_fit(6, data, FitConfig())
        obs = covariance_gamma(res.gamma, res.p, 6, data, "observed")
        scaled = covariance_gamma(res.gamma, res.p, 6, data, "scaled")
        np.testing.assert_allclose(scaled, data.n * obs, rtol=1e-14)
        H = LikelihoodWorkspace(res.gamma, 6, data).hessian_gamma(res.p)
        np.testing.assert_allclose(obs @ (-H), np.eye(2), atol=1e-10)

    def test_json_round_trip(self, case2_data):
        fit = mable_aft(case2_data, FitConfig(tau=12.0, degree_max=8))
        back = FitResult.from_dict(json.loads(json.dumps(fit.to_dict())))
        np.testing.assert_array_equal(back.gamma, fit.gamma)
        np.testing.assert_array_equal(back.p, fit.p)
        np.testing.assert_array_equal(back.sigma_gamma, fit.sigma_gamma)
        assert back.degree == fit.degree and back.tau == fit.tau
        bad = fit.to_dict() | {"schema": 2}
        with pytest.raises(ValueError, match="schema"):
            FitResult.from_dict(bad)

    def test_rejects_rescaled_input(self, rng):
        _, _, ds = random_instance(rng)
        with pytest.raises(ValueError):
            mable_aft(ds)

    def test_support_edge_warning(self):
        # an exact time at the largest endpoint with tau equal to it sits on the edge
        ds = Dataset([1.0, 2.0, 3.0, 0.5], [1.0, 2.0, 3.0, np.inf], [0, 0, 0, 1], np.zeros((4, 0)))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            fit = mable_aft(ds, FitConfig(degree_min=1, degree_max=4, tau=3.0 + 1e-9))
        assert any("support edge" in w for w in fit.diagnostics["warnings"])


class TestConfig:
    @pytest.mark.parametrize(
        "kwargs",
        [
            dict(fp_tol=0),
            dict(newton_maxit=0),
            dict(degree_min=3, degree_max=4),
            dict(covariance="sandwich"),
            dict(baseline="median"),
            dict(newton_steps=0),
        ],
    )
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            FitConfig(**kwargs)

    def test_defaults(self):
        cfg = FitConfig()
        assert cfg.degrees == list(range(3, 26))
        assert cfg.fp_tol == 1e-8 and cfg.fp_maxit == 5000
        assert cfg.newton_tol == 1e-8 and cfg.newton_maxit == 50
        assert cfg.outer_tol == 1e-7 and cfg.outer_maxit == 200


def test_kkt_residual_numpy():
    p = np.array([0.5, 0.5, 0.0])
    assert kkt_residual(p, np.array([1.0, 1.0, 0.3])) == 0.0
    assert kkt_residual(p, np.array([1.0, 1.0, 1.2])) == pytest.approx(0.2)
    assert kkt_residual(p, np.array([0.9, 1.1, 0.3])) == pytest.approx(0.1)
