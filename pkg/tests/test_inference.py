import math
import warnings

import numpy as np
import pytest
from scipy.integrate import quad

from bernstein_aft.basis import BernsteinModel, mixture_density, mixture_survival
from bernstein_aft.data import Dataset
from bernstein_aft.inference import (
    PredictionRequest,
    predict,
    predict_density,
    predict_survival,
    standard_errors,
)
from bernstein_aft.optimizer import FitResult, SingularityWarning, covariance_gamma


def make_fit(gamma, p, tau=5.0, sigma=None):
    gamma = np.atleast_1d(np.asarray(gamma, dtype=float))
    p = np.asarray(p, dtype=float)
    d = gamma.size
    sigma = np.eye(d) * 0.01 if sigma is None else np.asarray(sigma, dtype=float)
    return FitResult(gamma, p, p.size - 1, tau, -1.0, sigma, 50, tuple(f"x{i}" for i in range(d)))


@pytest.fixture
def fit(rng):
    return make_fit([0.4, -0.7], rng.dirichlet(np.ones(9)))


class TestSurvival:
    def test_time_zero(self, fit, rng):
        for x in rng.normal(size=(5, 2)):
            assert predict_survival(fit, x, [0.0])[0] == 1.0

    def test_zero_covariates_is_baseline(self, fit):
        model = BernsteinModel(fit.degree, fit.tau, fit.p)
        t = np.linspace(0, fit.tau, 23)
        ref = [mixture_survival(model, s) for s in t]
        np.testing.assert_allclose(predict_survival(fit, [0, 0], t), ref, atol=1e-14)

    def test_log_two_halves_time(self, rng):
        f = make_fit([math.log(2)], rng.dirichlet(np.ones(6)), tau=3.0)
        t = np.linspace(0, 6.0, 31)
        np.testing.assert_allclose(predict_survival(f, [1.0], t), predict_survival(f, [0.0], t / 2), atol=1e-14)

    def test_aft_consistency(self, fit, rng):
        t = np.linspace(0, 12, 50)
        for x in rng.normal(size=(4, 2)):
            scaled = t * math.exp(-fit.gamma @ x)
            np.testing.assert_allclose(predict_survival(fit, x, t), predict_survival(fit, [0, 0], scaled), atol=1e-10)

    def test_range_monotone_and_support_edge(self, fit):
        x = np.array([1.0, 0.5])
        edge = fit.tau * math.exp(fit.gamma @ x)
        t = np.linspace(0, 1.5 * edge, 400)
        s = predict_survival(fit, x, t)
        assert np.all((s >= 0) & (s <= 1))
        assert np.all(np.diff(s) <= 1e-15)
        assert np.all(s[t > edge] == 0.0)

    def test_survival_is_one_minus_integrated_density(self, fit):
        x = np.array([-0.3, 0.8])
        for t in (0.5, 2.0, 4.4):
            integral, _ = quad(lambda s: predict_density(fit, x, [s])[0], 0, t, epsabs=1e-12, epsrel=1e-12)
            assert predict_survival(fit, x, [t])[0] == pytest.approx(1 - integral, abs=1e-6)

    def test_baseline_shift(self, rng):
        f = make_fit([0.5], rng.dirichlet(np.ones(5)))
        g = make_fit([0.5], f.p)
        g.baseline = np.array([1.0])
        t = np.linspace(0, 4, 9)
        # shifting the reference subject is the same as shifting the covariate
        np.testing.assert_allclose(predict_survival(g, [2.0], t), predict_survival(f, [1.0], t), atol=1e-14)


class TestDensity:
    def test_zero_covariates_is_baseline(self, fit):
        model = BernsteinModel(fit.degree, fit.tau, fit.p)
        t = np.linspace(0, fit.tau, 17)
        np.testing.assert_allclose(predict_density(fit, [0, 0], t), [mixture_density(model, s) for s in t], rtol=1e-13)

    def test_change_of_variables(self, rng):
        c = 2.5
        f = make_fit([math.log(c)], rng.dirichlet(np.ones(7)))
        t = np.linspace(0, 10, 21)
        np.testing.assert_allclose(predict_density(f, [1.0], t), predict_density(f, [0.0], t / c) / c, rtol=1e-13)

    @pytest.mark.parametrize("x", [(0.0, 0.0), (1.0, -1.0), (-0.5, 2.0)])
    def test_integrates_to_one(self, fit, x):
        edge = fit.tau * math.exp(fit.gamma @ np.array(x))
        total, _ = quad(lambda s: predict_density(fit, x, [s])[0], 0, edge, epsabs=1e-12, epsrel=1e-12)
        assert total == pytest.approx(1.0, abs=1e-6)

    def test_zero_outside_support(self, fit):
        assert predict_density(fit, [0, 0], [fit.tau * 1.01])[0] == 0.0


class TestRequest:
    def test_validation(self):
        with pytest.raises(ValueError):
            PredictionRequest((0.0,), (-1.0, 2.0))
        with pytest.raises(ValueError):
            PredictionRequest((0.0,), (2.0, 1.0))
        with pytest.raises(ValueError):
            PredictionRequest((0.0,), (1.0,), "hazard")

    def test_dispatch(self, fit):
        req = PredictionRequest((0.2, 0.1), (0.0, 1.0, 2.0), "density")
        np.testing.assert_array_equal(predict(fit, req), predict_density(fit, req.covariates, req.times))
        req = PredictionRequest((0.2, 0.1), (0.0, 1.0, 2.0))
        np.testing.assert_array_equal(predict(fit, req), predict_survival(fit, req.covariates, req.times))

    def test_wrong_dimension(self, fit):
        with pytest.raises(ValueError, match="expected 2"):
            predict_survival(fit, [1.0], [1.0])


class TestStandardErrors:
    def test_closed_form_information(self, rng):
        # f(u) = 2(1-u) with exact data: -d2l/dgamma2 = sum x^2 u / (1-u)^2
        n = 12
        x = rng.uniform(-1, 1, n)
        y = rng.uniform(0.05, 0.6, n)
        g = 0.2
        ds = Dataset(y, y, np.zeros(n, dtype=int), x[:, None], tau=1.0, rescaled=True)
        p = np.array([1.0, 0.0])
        u = y * np.exp(-g * x)
        info = np.sum(x**2 * u / (1 - u) ** 2)
        cov = covariance_gamma([g], p, 1, ds)
        f = make_fit([g], p, tau=1.0, sigma=cov)
        assert standard_errors(f)[0] == pytest.approx(math.sqrt(1 / info), rel=1e-10)
        scaled = covariance_gamma([g], p, 1, ds, kind="scaled")
        assert scaled[0, 0] == pytest.approx(n / info, rel=1e-10)

    def test_diagonal(self):
        f = make_fit([0.1, 0.2], [0.5, 0.5], sigma=[[0.04, 0.01], [0.01, 0.09]])
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            np.testing.assert_allclose(standard_errors(f), [0.2, 0.3])

    def test_duplicated_columns_warn(self, rng):
        n = 15
        col = rng.uniform(-1, 1, n)
        y = rng.uniform(0.05, 0.5, n)
        ds = Dataset(y, y, np.zeros(n, dtype=int), np.column_stack([col, col]), tau=1.0, rescaled=True)
        p = np.array([1.0, 0.0])
        with pytest.warns(SingularityWarning):
            cov = covariance_gamma([0.1, 0.1], p, 1, ds)
        with pytest.warns(SingularityWarning):
            se = standard_errors(make_fit([0.1, 0.1], p, tau=1.0, sigma=cov))
        assert np.all(np.isfinite(se))

    def test_indefinite_reports_absolute_diagonal(self):
        f = make_fit([0.0, 0.0], [1.0], sigma=[[-0.25, 0.0], [0.0, 0.16]])
        with pytest.warns(SingularityWarning):
            np.testing.assert_allclose(standard_errors(f), [0.5, 0.4])

    def test_no_covariates(self):
        f = FitResult(np.zeros(0), np.array([1.0]), 0, 1.0, 0.0, np.zeros((0, 0)), 3, ())
        assert standard_errors(f).size == 0
