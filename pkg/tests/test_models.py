"""Black-Scholes oracle model, Euler diffusions and payoffs."""

import numpy as np
import pytest
from scipy import integrate
from scipy.stats import norm

from greeks_dk import (
    BlackScholesModel,
    ConfigurationError,
    DomainError,
    EulerDiffusionModel,
    SimulationError,
    bs_score,
    bs_true_greek,
    bs_true_value,
    digital_payoff,
    euler_gbm_model,
    euler_simulate,
    identity_payoff,
    put_payoff,
    simulate_fixed,
    smoothed_put_payoff,
    truncated_call_payoff,
)

R, SIGMA, T = 0.05, 0.2, 1.0
S0, STRIKE = 100.0, 100.0


@pytest.fixture(scope="module")
def model():
    return BlackScholesModel(r=R, sigma=SIGMA, T=T)


def closed_form_put(lam, strike):
    """Independent oracle: riskless-asset-unit put value and delta."""
    sq = SIGMA * np.sqrt(T)
    d1 = (np.log(lam / strike) + (R + 0.5 * SIGMA**2) * T) / sq
    d2 = d1 - sq
    value = strike * np.exp(-R * T) * norm.cdf(-d2) - lam * norm.cdf(-d1)
    delta = norm.cdf(d1) - 1.0
    return value, delta


class TestBlackScholes:
    def test_simulate_form(self, model):
        rng = np.random.default_rng(10)
        g = np.random.default_rng(10).standard_normal(5)
        z = model.simulate_batch(np.full((5, 1), S0), rng)
        expected = S0 * np.exp((R - 0.5 * SIGMA**2) * T + SIGMA * np.sqrt(T) * g)
        np.testing.assert_allclose(z[:, 0], expected, rtol=1e-14)

    def test_density_integrates_to_one(self, model):
        for lam in np.linspace(50.0, 180.0, 10):
            val, _ = integrate.quad(lambda z: model.density(lam, z), 0.0, np.inf, limit=300)
            assert abs(val - 1.0) < 1e-6

    def test_score_matches_fd_on_grid(self, model):
        lams = np.linspace(80.0, 120.0, 50)
        zs = np.linspace(60.0, 160.0, 50)
        step = 1e-6 * S0
        worst = 0.0
        for lam in lams:
            s = model.score(lam, zs)
            fd = (np.log(model.density(lam + step, zs)) - np.log(model.density(lam - step, zs))) / (
                2 * step
            )
            worst = max(worst, np.max(np.abs(s - fd) / np.maximum(np.abs(fd), 1e-3)))
        assert worst < 1e-5

    def test_score_examples(self, model):
        # numerator vanishes at the median drift point
        z_med = S0 * np.exp((R - 0.5 * SIGMA**2) * T)
        assert abs(bs_score(model, S0, z_med)) < 1e-14
        # scores have zero mean under their own density
        zs = simulate_fixed(model, S0, 1_000_000, seed=31)[:, 0]
        s = model.score(S0, zs)
        assert abs(s.mean()) < 3.0 * s.std() / np.sqrt(s.size)
        # fixed-point value against the finite-difference oracle
        step = 1e-4
        fd = (np.log(model.density(100 + step, 110.0)) - np.log(model.density(100 - step, 110.0))) / (
            2 * step
        )
        assert abs(bs_score(model, 100.0, 110.0) - fd) < 1e-6

    def test_score_domain_errors(self, model):
        with pytest.raises(DomainError):
            bs_score(model, 100.0, -1.0)
        with pytest.raises(DomainError):
            model.score(-5.0, 100.0)

    def test_tangent_shape_and_value(self, model):
        lams = np.full((4, 1), 50.0)
        zs = np.array([[55.0], [60.0], [45.0], [52.0]])
        t = model.tangent(lams, zs)
        assert t.shape == (4, 1, 1)
        np.testing.assert_allclose(t[:, 0, 0], zs[:, 0] / 50.0)


class TestTrueValues:
    def test_put_value_frozen_reference(self, model):
        val = bs_true_value(model, "put", STRIKE, S0)
        oracle, _ = closed_form_put(S0, STRIKE)
        assert abs(val - oracle) < 1e-12
        assert abs(val - 5.5735) < 1e-3

    def test_put_value_quadrature_oracle(self, model):
        # independent route: integrate the discounted payoff against the density
        oracle, _ = integrate.quad(
            lambda z: np.exp(-R * T) * (STRIKE - z) * model.density(S0, z), 0.0, STRIKE, limit=300
        )
        assert abs(bs_true_value(model, "put", STRIKE, S0) - oracle) < 1e-8

    def test_tiny_strike_put_worthless(self, model):
        assert bs_true_value(model, "put", 1e-6, S0) < 1e-12

    def test_digital_small_strike_probability_one(self, model):
        assert abs(bs_true_value(model, "digital", 1e-3, S0) - 1.0) < 1e-9

    def test_digital_matches_closed_form(self, model):
        # undiscounted exercise probability Phi(d2)
        sq = SIGMA * np.sqrt(T)
        d2 = (np.log(S0 / STRIKE) + (R - 0.5 * SIGMA**2) * T) / sq
        assert abs(bs_true_value(model, "digital", STRIKE, S0) - norm.cdf(d2)) < 1e-8

    def test_truncated_call_below_plain_call(self, model):
        capped = bs_true_value(model, "truncated_call", STRIKE, S0, barrier=150.0)
        further = bs_true_value(model, "truncated_call", STRIKE, S0, barrier=400.0)
        assert 0.0 < capped < further

    def test_preconditions(self, model):
        with pytest.raises(ValueError):
            bs_true_value(model, "put", -1.0, S0)
        with pytest.raises(ConfigurationError):
            bs_true_value(model, "straddle", STRIKE, S0)
        with pytest.raises(ConfigurationError):
            bs_true_value(model, "truncated_call", STRIKE, S0)


class TestTrueGreeks:
    def test_put_delta_frozen_reference(self, model):
        greek = bs_true_greek(model, "put", STRIKE, S0)
        _, oracle = closed_form_put(S0, STRIKE)
        assert abs(greek - oracle) < 1e-12
        assert abs(greek - (-0.3632)) < 5e-4

    def test_deep_out_of_the_money_put(self, model):
        assert abs(bs_true_greek(model, "put", STRIKE, 10 * STRIKE)) < 1e-8

    def test_constant_value_means_zero_greek(self, model):
        # a digital with negligible strike pays 1 almost surely at any spot
        assert abs(bs_true_greek(model, "digital", 1e-3, S0)) < 1e-7

    def test_digital_greek_fd_vs_closed_form(self, model):
        sq = SIGMA * np.sqrt(T)

        def closed(lam):
            d2 = (np.log(lam / STRIKE) + (R - 0.5 * SIGMA**2) * T) / sq
            return norm.cdf(d2)

        fd_oracle = (closed(S0 + 1e-4) - closed(S0 - 1e-4)) / 2e-4
        assert abs(bs_true_greek(model, "digital", STRIKE, S0) - fd_oracle) < 1e-7

    def test_likelihood_ratio_identity(self, model):
        # E[phi(Z) * score(Z)] equals the true sensitivity (module-scale check)
        payoff = put_payoff(STRIKE, model)
        zs = simulate_fixed(model, S0, 200_000, seed=8)
        w = payoff.evaluate(zs) * model.score(S0, zs[:, 0])
        se = w.std(ddof=1) / np.sqrt(w.size)
        assert abs(w.mean() - bs_true_greek(model, "put", STRIKE, S0)) < 4 * se


class TestEuler:
    def test_deterministic_constant_path(self):
        ident = EulerDiffusionModel(
            x0=lambda lams: np.asarray(lams, dtype=float).copy(),
            mu=lambda t, lams, x: np.zeros_like(x),
            sigma_fn=lambda t, lams, x: np.zeros((x.shape[0], 1, 1)),
            T=1.0,
            steps=17,
            param_dim=1,
            state_dim=1,
            wiener_dim=1,
        )
        rng = np.random.default_rng(0)
        out = euler_simulate(ident, 3.25, rng)
        assert out.shape == (1,)
        assert out[0] == 3.25

    def test_gbm_weak_error_vs_closed_form(self, model):
        # same Gaussian increments: the aggregated Brownian path feeds both the
        # Euler recursion and the exact lognormal map
        steps = 512
        n = 100_000
        rng = np.random.default_rng(99)
        g = rng.standard_normal((n, steps))
        dt = T / steps
        x = np.full(n, S0)
        for k in range(steps):
            x = x + R * x * dt + SIGMA * x * np.sqrt(dt) * g[:, k]
        w_t = np.sqrt(dt) * g.sum(axis=1)
        exact = S0 * np.exp((R - 0.5 * SIGMA**2) * T + SIGMA * w_t)
        payoff = put_payoff(STRIKE, model)
        phi_euler = payoff.evaluate(x[:, None])
        phi_exact = payoff.evaluate(exact[:, None])
        diff = phi_euler - phi_exact
        se = diff.std(ddof=1) / np.sqrt(n)
        assert abs(diff.mean()) < 3 * se + 1e-2

    def test_euler_model_matches_manual_recursion(self):
        gbm = euler_gbm_model(R, SIGMA, T, steps=16)
        lams = np.array([[90.0], [100.0], [110.0]])
        out = gbm.simulate_batch(lams, np.random.default_rng(5))
        g = np.random.default_rng(5).standard_normal((16, 3))
        dt = T / 16
        x = lams[:, 0].copy()
        for k in range(16):
            x = x + R * x * dt + SIGMA * x * np.sqrt(dt) * g[k]
        np.testing.assert_allclose(out[:, 0], x, rtol=1e-14)

    def test_ellipticity_identity_passes(self):
        ok = EulerDiffusionModel(
            x0=lambda lams: np.asarray(lams, dtype=float).copy(),
            mu=lambda t, lams, x: np.zeros_like(x),
            sigma_fn=lambda t, lams, x: np.broadcast_to(np.eye(1), (x.shape[0], 1, 1)).copy(),
            T=1.0,
            steps=4,
            param_dim=1,
            state_dim=1,
            wiener_dim=1,
            ellipticity_c=1.0 + 1e-12,
        )
        out = ok.simulate_batch(np.ones((3, 1)), np.random.default_rng(1))
        assert out.shape == (3, 1)

    def test_ellipticity_violation_raises_with_step(self):
        bad = EulerDiffusionModel(
            x0=lambda lams: np.asarray(lams, dtype=float).copy(),
            mu=lambda t, lams, x: np.zeros_like(x),
            sigma_fn=lambda t, lams, x: np.full((x.shape[0], 1, 1), 3.0),
            T=1.0,
            steps=4,
            param_dim=1,
            state_dim=1,
            wiener_dim=1,
            ellipticity_c=2.0,
        )
        with pytest.raises(SimulationError) as err:
            bad.simulate_batch(np.ones((2, 1)), np.random.default_rng(1))
        assert err.value.step == 0

    def test_nonfinite_state_raises_with_step(self):
        exploding = EulerDiffusionModel(
            x0=lambda lams: np.asarray(lams, dtype=float).copy(),
            mu=lambda t, lams, x: x * 1e200,
            sigma_fn=lambda t, lams, x: np.zeros((x.shape[0], 1, 1)),
            T=1.0,
            steps=8,
            param_dim=1,
            state_dim=1,
            wiener_dim=1,
        )
        with pytest.raises(SimulationError) as err, np.errstate(over="ignore"):
            exploding.simulate_batch(np.ones((1, 1)), np.random.default_rng(1))
        assert err.value.step is not None


class TestPayoffs:
    def test_put_discounted_and_supported(self, model):
        payoff = put_payoff(STRIKE, model)
        z = np.array([[50.0], [99.0], [100.0], [130.0]])
        expected = np.exp(-R * T) * np.maximum(STRIKE - z[:, 0], 0.0)
        np.testing.assert_allclose(payoff.evaluate(z), expected)
        lo, hi = payoff.support_box[0]
        assert (lo, hi) == (0.0, STRIKE)
        grid = np.linspace(hi + 1e-9, hi + 500, 100)[:, None]
        assert np.all(payoff.evaluate(grid) == 0.0)

    def test_put_derivative(self, model):
        payoff = put_payoff(STRIKE, model)
        z = np.array([[50.0], [100.0], [150.0]])
        np.testing.assert_allclose(
            payoff.derivative(z)[:, 0], [-np.exp(-R * T), 0.0, 0.0]
        )

    def test_put_floor_box(self, model):
        payoff = put_payoff(STRIKE, model, z_min_frac=1e-3)
        np.testing.assert_allclose(payoff.floor_box, [[0.1, 100.0]])

    def test_digital_indicator(self):
        payoff = digital_payoff(STRIKE)
        z = np.array([[99.999], [100.0], [100.001], [1e6]])
        np.testing.assert_allclose(payoff.evaluate(z), [0.0, 0.0, 1.0, 1.0])
        assert payoff.derivative is None
        assert not payoff.continuous

    def test_truncated_call_zero_outside_box(self, model):
        payoff = truncated_call_payoff(STRIKE, 150.0, model)
        z = np.array([[90.0], [120.0], [150.0], [151.0]])
        vals = payoff.evaluate(z)
        assert vals[0] == 0.0
        assert vals[1] == pytest.approx(np.exp(-R * T) * 20.0)
        assert vals[3] == 0.0

    def test_identity_payoff(self):
        payoff = identity_payoff()
        z = np.array([[3.0], [-2.0]])
        np.testing.assert_allclose(payoff.evaluate(z), [3.0, -2.0])
        np.testing.assert_allclose(payoff.derivative(z)[:, 0], [1.0, 1.0])

    def test_smoothed_put_ramp(self, model):
        payoff = smoothed_put_payoff(STRIKE, (70.0, 80.0), model)
        z = np.array([[60.0], [70.0], [75.0], [80.0], [90.0], [100.0], [120.0]])
        vals = payoff.evaluate(z)
        factor = np.exp(-R * T)
        assert vals[0] == 0.0
        assert vals[1] == 0.0
        assert vals[2] == pytest.approx(factor * 25.0 * 0.5)
        assert vals[3] == pytest.approx(factor * 20.0)
        assert vals[4] == pytest.approx(factor * 10.0)
        assert vals[5] == 0.0
        assert vals[6] == 0.0
        # continuity across the ramp edges
        for edge in (70.0, 80.0, 100.0):
            lo = payoff.evaluate(np.array([[edge - 1e-9]]))[0]
            hi = payoff.evaluate(np.array([[edge + 1e-9]]))[0]
            assert abs(lo - hi) < 1e-6

    def test_smoothed_put_derivative_matches_fd(self, model):
        payoff = smoothed_put_payoff(STRIKE, (70.0, 80.0), model)
        zs = np.linspace(70.5, 99.5, 50)
        step = 1e-6
        fd = (payoff.evaluate((zs + step)[:, None]) - payoff.evaluate((zs - step)[:, None])) / (
            2 * step
        )
        np.testing.assert_allclose(payoff.derivative(zs[:, None])[:, 0], fd, atol=1e-6)

    def test_smoothed_put_bad_ramp_rejected(self, model):
        with pytest.raises(ConfigurationError):
            smoothed_put_payoff(STRIKE, (80.0, 70.0), model)
