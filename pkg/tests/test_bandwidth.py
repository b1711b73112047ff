"""Rate constants, the optimal bandwidth rule and undersmoothing."""

import numpy as np
import pytest
from scipy import integrate

from greeks_dk import (
    BlackScholesModel,
    ConfigurationError,
    DegeneratePlanError,
    Payoff,
    compute_kernel_constants,
    compute_rate_constants,
    make_randomizing_density,
    make_standard_kernel,
    optimal_bandwidth,
    put_payoff,
    undersmoothed_bandwidth,
)

MODEL = BlackScholesModel(r=0.05, sigma=0.2, T=1.0)
PAYOFF = put_payoff(100.0, MODEL)
K1 = make_standard_kernel("epanechnikov", 1)
H1 = make_standard_kernel("epanechnikov", 1)
ELL = make_randomizing_density("epanechnikov_product", 1, 0.5)


def zero_payoff():
    return Payoff(
        evaluate=lambda z: np.zeros(np.asarray(z).shape[:-1]),
        support_box=np.array([[0.0, 100.0]]),
        continuous=True,
        name="zero",
    )


class TestRateConstants:
    def test_zero_payoff_kills_everything(self):
        rc = compute_rate_constants(MODEL, zero_payoff(), ELL, 100.0, K1, H1)
        assert np.all(rc.c1 == 0)
        assert np.all(rc.c2 == 0)
        assert np.all(rc.sigma_tilde == 0)

    def test_sigma_tilde_two_independent_integrators(self):
        rc = compute_rate_constants(MODEL, PAYOFF, ELL, 100.0, K1, H1)
        # route one: adaptive quadrature of phi^2 against the density
        phi2_quad, _ = integrate.quad(
            lambda z: float(PAYOFF.evaluate(np.array([z]))) ** 2 * MODEL.density(100.0, z),
            0.0, 100.0, limit=300,
        )
        # route two: Gauss-Legendre on the same compact support
        xs, ws = np.polynomial.legendre.leggauss(400)
        zg = 50.0 * xs + 50.0
        phi2_gl = float(np.sum(50.0 * ws * PAYOFF.evaluate(zg[:, None]) ** 2
                               * MODEL.density(100.0, zg)))
        assert abs(phi2_quad - phi2_gl) < 1e-4 * abs(phi2_quad)
        sigma_factor = compute_kernel_constants(K1, H1).sigma_factor[0, 0]
        ell0 = float(ELL.evaluate(np.zeros(1)))
        assert rc.sigma_tilde[0, 0] == pytest.approx(phi2_quad / ell0 * sigma_factor, rel=1e-6)

    def test_c1_stable_under_step_halving(self):
        a = compute_rate_constants(MODEL, PAYOFF, ELL, 100.0, K1, H1, fd_step_scale=0.05)
        b = compute_rate_constants(MODEL, PAYOFF, ELL, 100.0, K1, H1, fd_step_scale=0.025)
        assert abs(a.c1[0] - b.c1[0]) < 0.01 * abs(a.c1[0])

    def test_analytic_requires_density(self):
        class NoDensity:
            has_density = False
            param_dim = 1
            state_dim = 1

        with pytest.raises(ConfigurationError):
            compute_rate_constants(NoDensity(), PAYOFF, ELL, 100.0, K1, H1)

    def test_pilot_and_rule_of_thumb(self):
        pilot = compute_rate_constants(
            MODEL, PAYOFF, ELL, 100.0, K1, H1, method="pilot_mc", pilot_draws=2048, seed=5
        )
        rot = compute_rate_constants(MODEL, PAYOFF, ELL, 100.0, K1, H1, method="rule_of_thumb")
        assert pilot.source == "pilot_mc"
        assert pilot.sigma_tilde[0, 0] > 0
        # both rules place the planned bandwidth at sigma_ell * N^(-1/7)
        for rc in (pilot, rot):
            plan = optimal_bandwidth(rc, 10_000, 2, 2, 1, n=1)
            assert plan.h_star == pytest.approx(ELL.coordinate_std * 10_000 ** (-1.0 / 7.0), rel=1e-12)

    def test_unknown_method(self):
        with pytest.raises(ConfigurationError):
            compute_rate_constants(MODEL, PAYOFF, ELL, 100.0, K1, H1, method="oracle")


class TestOptimalBandwidth:
    def setup_method(self):
        self.rc = compute_rate_constants(MODEL, PAYOFF, ELL, 100.0, K1, H1)

    def test_rate_exponent_reference_values(self):
        assert optimal_bandwidth(self.rc, 1000, 2, 2, 1, n=1).rate_exponent == pytest.approx(-4.0 / 7.0)
        assert optimal_bandwidth(self.rc, 1000, 4, 4, 1, n=1).rate_exponent == pytest.approx(-8.0 / 11.0)
        rc2 = compute_rate_constants(
            MODEL, PAYOFF, ELL, 100.0, K1, H1, method="rule_of_thumb"
        )
        # d = 2 instance of the same rule
        rc2d = type(rc2)(
            c1=np.array([1.0, 0.5]), c2=np.array([0.2, 0.1]),
            sigma_tilde=np.eye(2), source="manual",
        )
        assert optimal_bandwidth(rc2d, 1000, 2, 2, 2, n=1).rate_exponent == pytest.approx(-0.5)

    def test_quadrupling_n_scales_h_exactly(self):
        a = optimal_bandwidth(self.rc, 10_000, 2, 2, 1, n=1).h_star
        b = optimal_bandwidth(self.rc, 40_000, 2, 2, 1, n=1).h_star
        assert b == pytest.approx(a * 4.0 ** (-1.0 / 7.0), rel=1e-14)

    def test_homogeneity_in_constants(self):
        c = 17.3
        scaled = type(self.rc)(
            c1=self.rc.c1 * np.sqrt(c),
            c2=self.rc.c2 * np.sqrt(c),
            sigma_tilde=self.rc.sigma_tilde * c,
            source="scaled",
        )
        a = optimal_bandwidth(self.rc, 5_000, 2, 2, 1, n=1).h_star
        b = optimal_bandwidth(scaled, 5_000, 2, 2, 1, n=1).h_star
        assert b == pytest.approx(a, rel=1e-12)

    def test_feasibility_flag(self):
        assert optimal_bandwidth(self.rc, 1000, 2, 2, 1, n=1).feasible
        assert not optimal_bandwidth(self.rc, 1000, 2, 2, 1, n=3).feasible

    def test_dominant_constant_selection(self):
        rc = type(self.rc)(
            c1=np.array([2.0]), c2=np.array([100.0]), sigma_tilde=np.eye(1), source="manual"
        )
        # p < q: only c1 enters
        h_p = optimal_bandwidth(rc, 1000, 2, 4, 1, n=1).h_star
        expected = ((1 + 2) * 1.0 / (2 * 2 * 4.0 * 1000)) ** (1.0 / 7.0)
        assert h_p == pytest.approx(expected, rel=1e-12)

    def test_degenerate_plan(self):
        rc = type(self.rc)(
            c1=np.zeros(1), c2=np.zeros(1), sigma_tilde=np.eye(1), source="manual"
        )
        with pytest.raises(DegeneratePlanError):
            optimal_bandwidth(rc, 1000, 2, 2, 1, n=1)

    def test_diagnostics_fields(self):
        plan = optimal_bandwidth(self.rc, 20_000, 2, 2, 1, n=1)
        assert plan.diagnostics["literal_313"] > 0
        assert plan.diagnostics["corrected_313"] > 0
        assert plan.diagnostics["undersmooth_flag"] is False


class TestUndersmoothing:
    def setup_method(self):
        rc = compute_rate_constants(MODEL, PAYOFF, ELL, 100.0, K1, H1)
        self.plan = optimal_bandwidth(rc, 100_000, 2, 2, 1, n=1)

    def test_gamma_zero_identity(self):
        assert undersmoothed_bandwidth(self.plan, 0.0) == self.plan.h_star

    def test_condition_verified_numerically(self):
        h = undersmoothed_bandwidth(self.plan, 0.6)
        assert 100_000 * h**7 < 1.0
        assert self.plan.diagnostics["undersmooth_flag"] is True

    def test_infeasible_gamma_rejected(self):
        with pytest.raises(ValueError):
            undersmoothed_bandwidth(self.plan, 1e-4)
        with pytest.raises(ValueError):
            undersmoothed_bandwidth(self.plan, 1.5)
