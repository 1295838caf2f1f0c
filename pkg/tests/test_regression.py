import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from enlarged.density import BOUNDARY, INTERIOR, EnlargedFit, FitOptions
from enlarged.errors import DataError, DegenerateScoreError, DesignSingularError, ScaleDegenerateError
from enlarged.harness import gen_reg_synth, gen_reg_toy
from enlarged.linear import wls
from enlarged.regression import (
    RegData,
    RegParams,
    c_reg,
    cond_logpdf,
    cond_power_score,
    cond_sphere_score,
    cond_stats,
    detect_outliers_reg,
    fit_enlarged_reg,
    fit_power_reg,
    fit_sphere_reg,
    gauss_power_constant,
)

SQRT_2PI = math.sqrt(2 * math.pi)


def toy_clean(rng, n):
    x = rng.standard_normal(n)
    return RegData(x[:, None], 1.0 + 10.0 * x + rng.standard_normal(n))


def line_data(n=5):
    x = np.linspace(-1, 1, n)
    return RegData(x[:, None], 2.0 * x + 1.0)


class TestStats:
    def test_i_independent_of_x(self, rng):
        gamma = 0.3
        p = RegParams([2.0, -1.0], 0.5, 0.7)
        I = cond_stats(RegData(rng.standard_normal((4, 2)), rng.standard_normal(4)), p, gamma).I
        for x in rng.standard_normal((5, 2)):
            m = float(x @ p.beta + p.intercept)
            dens = lambda y: math.exp(-0.5 * ((y - m) / p.sigma) ** 2) / (SQRT_2PI * p.sigma)
            val, _ = integrate.quad(lambda y: dens(y) ** (1 + gamma), m - 15, m + 15, epsabs=0, epsrel=1e-12)
            assert val == pytest.approx(I, rel=1e-8)

    def test_frozen_power(self):
        d = RegData(np.array([[0.0], [1.0], [2.0]]), np.array([0.0, 1.0, 2.0]))
        p = RegParams([1.0], 0.0, 1.0)
        assert cond_power_score(d, p, 1.0, 1.0) == pytest.approx(-0.5157898, abs=5e-8)

    def test_frozen_sphere(self):
        d = line_data(7)
        p = RegParams([2.0], 1.0, 1.0)
        assert cond_sphere_score(d, p, 1.0) == pytest.approx(-0.7511255, abs=5e-8)

    def test_frozen_c_reg(self):
        c_raw, c = c_reg(line_data(), RegParams([2.0], 1.0, 1.0), 1.0)
        assert c_raw == pytest.approx(math.sqrt(2), rel=1e-12) and c == 1.0

    def test_c_to_zero(self, rng):
        d = toy_clean(rng, 20)
        p = RegParams([10.0], 1.0, 1.0)
        assert abs(cond_power_score(d, p, 1e-9, 0.5)) < 1e-4

    def test_profile_equality_on_grid(self, rng):
        d = toy_clean(rng, 100)
        p = RegParams([9.5], 1.2, 1.3)
        gamma = 0.5
        c_raw, _ = c_reg(d, p, gamma)
        grid = np.linspace(0.5, 1.5, 1001) * c_raw
        vals = np.array([cond_power_score(d, p, c, gamma) for c in grid])
        target = -((-cond_sphere_score(d, p, gamma)) ** (1 + gamma))
        assert vals.min() == pytest.approx(target, abs=1e-8)
        assert cond_power_score(d, p, c_raw, gamma) == pytest.approx(target, rel=1e-10)

    def test_c_reg_monte_carlo(self, rng):
        n, gamma = 100_000, 0.5
        x = rng.standard_normal(n)
        d = RegData(x[:, None], 1 + 2 * x + rng.standard_normal(n))
        p = RegParams([2.0], 1.0, 1.0)
        w = np.exp(gamma * cond_logpdf(d, p))
        I = cond_stats(d, p, gamma).I
        assert abs(c_reg(d, p, gamma)[0] - 1) < 3 * w.std() / I / math.sqrt(n)

    def test_half_far_outliers(self, rng):
        n = 4000
        x = rng.standard_normal(n)
        y = 1 + 2 * x + rng.standard_normal(n)
        y[: n // 2] += 1e4
        c_raw, _ = c_reg(RegData(x[:, None], y), RegParams([2.0], 1.0, 1.0), 0.1)
        assert abs(c_raw - 0.5) < 0.05

    def test_sphere_invariant_to_model_scale(self, rng):
        d = toy_clean(rng, 30)
        p = RegParams([9.0], 1.0, 1.5)
        gamma = 0.4
        st_ = cond_stats(d, p, gamma)
        for c in (0.1, 10.0):
            val = -(c**gamma * st_.A) / (c ** (1 + gamma) * st_.I) ** (gamma / (1 + gamma))
            assert val == pytest.approx(cond_sphere_score(d, p, gamma), rel=1e-12)

    def test_one_far_outlier_bound(self, rng):
        d = toy_clean(rng, 100)
        p = RegParams([10.0], 1.0, 1.0)
        base = cond_sphere_score(d, p, 0.1)
        x2 = np.vstack([d.x, [[0.0]]])
        y2 = np.append(d.y, 1.0 + 1e4)
        new = cond_sphere_score(RegData(x2, y2), p, 0.1)
        assert abs(new - base) < (1 / 99) * abs(base) * 1.01

    def test_degenerate(self):
        d = line_data()
        with pytest.raises(DegenerateScoreError):
            c_reg(d, RegParams([2.0], 1e6, 1.0), 0.5)

    def test_sigma_floor(self):
        d = line_data()
        with pytest.raises(ScaleDegenerateError):
            cond_power_score(d, RegParams([2.0], 1.0, 1e-30), 1.0, 0.5)

    def test_data_validation(self):
        with pytest.raises(DataError):
            RegData(np.zeros((3, 2)), np.zeros(3))
        with pytest.raises(DataError):
            RegData(np.zeros((5, 1)), np.array([0, 1, 2, np.inf, 4.0]))
        with pytest.raises(ScaleDegenerateError):
            RegParams([1.0], 0.0, 0.0)

    def test_gauss_constant(self):
        assert gauss_power_constant(1.0) == pytest.approx(1 / (2 * math.sqrt(math.pi)), rel=1e-14)


class TestFits:
    def test_sphere_clean_toy(self, rng):
        p, d = fit_sphere_reg(toy_clean(rng, 5000), 0.1)
        assert abs(p.beta[0] - 10) < 0.1 and abs(p.intercept - 1) < 0.1 and abs(p.sigma - 1) < 0.05

    def test_power_clean_toy(self, rng):
        p, d = fit_power_reg(toy_clean(rng, 5000), 0.1)
        assert abs(p.beta[0] - 10) < 0.1 and abs(p.intercept - 1) < 0.1 and abs(p.sigma - 1) < 0.05

    def test_power_small_gamma_is_ols(self, rng):
        d = toy_clean(rng, 300)
        p, _ = fit_power_reg(d, 1e-4)
        np.testing.assert_allclose(p.coef, wls(d.design, d.y), atol=1e-2)

    def test_symmetric_two_points(self):
        d = RegData(np.array([[-1.0], [1.0], [-1.0], [1.0]]), np.array([-1.1, 0.9, -0.9, 1.1]))
        p, _ = fit_sphere_reg(d, 0.1, init=RegParams([1.0], 0.0, 0.5))
        assert abs(p.intercept) < 1e-12

    def test_perfect_fit_degenerate(self):
        with pytest.raises(ScaleDegenerateError):
            fit_power_reg(line_data(10), 0.1)

    def test_rank_deficient(self):
        x = np.column_stack([np.arange(6.0), 2 * np.arange(6.0)])
        with pytest.raises(DesignSingularError):
            fit_sphere_reg(RegData(x, np.arange(6.0) + np.sin(np.arange(6.0))), 0.1)

    @pytest.mark.parametrize("fitter", [fit_sphere_reg, fit_power_reg])
    def test_descent(self, fitter, rng):
        d, _ = gen_reg_toy(rng, 50, 0.3)
        _, diag = fitter(d, 0.1, FitOptions(n_starts=1))
        t = np.array(diag.score_trace)
        assert np.all(np.diff(t) <= 1e-10 * np.abs(t[:-1]))

    def test_interior_is_stationary(self, rng):
        d, _ = gen_reg_toy(rng, 50, 0.3)
        fit = fit_enlarged_reg(d, 0.1, FitOptions(tol=1e-12))
        assert fit.branch == INTERIOR and fit.c_raw < 1
        v0 = np.append(fit.theta_hat.coef, math.log(fit.theta_hat.sigma))
        f = lambda v: cond_sphere_score(d, RegParams.from_coef(v[:-1], math.exp(v[-1])), 0.1)
        h = 1e-6
        g = np.array([(f(v0 + h * e) - f(v0 - h * e)) / (2 * h) for e in np.eye(v0.size)])
        assert np.linalg.norm(g) < 1e-4 * abs(f(v0))

    def test_branch_consistency(self, rng):
        for _ in range(10):
            x = rng.standard_normal(60)
            d = RegData(x[:, None], 1 + 10 * x + rng.standard_normal(60))
            fit = fit_enlarged_reg(d, 0.1)
            assert (fit.branch == BOUNDARY) == (fit.c_hat == 1.0)
            assert fit.final_score <= cond_power_score(d, fit.theta_hat, 1.0, 0.1) + 1e-12

    def test_y_equivariance(self, rng):
        d, _ = gen_reg_toy(rng, 50, 0.3)
        a, b = 3.5, -20.0
        opts = FitOptions(tol=1e-12)
        f0 = fit_enlarged_reg(d, 0.1, opts)
        d2 = RegData(d.x, a * d.y + b)
        f1 = fit_enlarged_reg(d2, 0.1, opts)
        p0, p1 = f0.theta_hat, f1.theta_hat
        assert f1.c_hat == pytest.approx(f0.c_hat, rel=1e-6)
        np.testing.assert_allclose(p1.beta, a * p0.beta, rtol=1e-6)
        assert p1.intercept == pytest.approx(a * p0.intercept + b, rel=1e-6)
        assert p1.sigma == pytest.approx(a * p0.sigma, rel=1e-6)
        np.testing.assert_array_equal(detect_outliers_reg(d, f0), detect_outliers_reg(d2, f1))

    def test_heterogeneous_ratio(self, rng):
        """c0(x) = 1 for x1 < 0.5 and 0.6 otherwise: 1 - c_hat tracks the expected ratio 0.2."""
        n, dim = 2000, 3
        x = rng.random((n, dim))
        theta = rng.standard_normal(dim)
        y = x @ theta + rng.normal(0, 0.5, n)
        hit = (x[:, 0] >= 0.5) & (rng.random(n) < 0.4)
        y[hit] = rng.normal(0, 1e4, hit.sum())
        fit = fit_enlarged_reg(RegData(x, y), 0.1)
        assert abs((1 - fit.c_hat) - 0.2) < 0.05

    def test_setup1_ratio(self):
        r = []
        for seed in range(20):
            tr, _, _, _ = gen_reg_synth(seed, 100, 5, 0.2, "y_only", n_test=10)
            r.append(1 - fit_enlarged_reg(tr, 0.1).c_hat)
        assert 0.10 <= np.mean(r) <= 0.24


class TestOutliers:
    def test_empty_at_one(self, rng):
        d = toy_clean(rng, 20)
        fit = EnlargedFit(1.0, RegParams([10.0], 1.0, 1.0), BOUNDARY, 0, True, 0.0)
        assert detect_outliers_reg(d, fit).size == 0

    def test_largest_residuals(self, rng):
        d = toy_clean(rng, 40)
        p = RegParams([10.0], 1.0, 1.0)
        fit = EnlargedFit(0.75, p, INTERIOR, 0, True, 0.0)
        idx = detect_outliers_reg(d, fit)
        assert set(idx) == set(np.argsort(-np.abs(p.residuals(d)))[:10])

    def test_toy_precision(self):
        prec = []
        for seed in range(30):
            d, plant = gen_reg_toy(seed, 50, 0.3)
            det = detect_outliers_reg(d, fit_enlarged_reg(d, 0.1))
            if det.size:
                prec.append(len(set(det) & set(plant)) / det.size)
        assert np.mean(prec) >= 0.8


@given(seed=st.integers(0, 2**32 - 1), gamma=st.floats(0.05, 2.0))
def test_profile_identity_property(seed, gamma):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(5, 80))
    x = rng.standard_normal((n, 2))
    d = RegData(x, x @ [1.0, -2.0] + rng.standard_normal(n) * 3)
    p = RegParams(rng.standard_normal(2), rng.standard_normal(), float(rng.uniform(0.3, 3)))
    c_raw, _ = c_reg(d, p, gamma)
    lhs = cond_power_score(d, p, c_raw, gamma)
    assert lhs == pytest.approx(-((-cond_sphere_score(d, p, gamma)) ** (1 + gamma)), rel=1e-10)
