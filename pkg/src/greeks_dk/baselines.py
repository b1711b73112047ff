"""Classical sensitivity estimators used as references.

Finite differences (with or without common random numbers), the
likelihood-ratio estimator built on the analytic score, pathwise
differentiation through the simulated state, and the weight-variance
experiment showing that the score is the minimum-variance weight.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .estimator import EstimateReport
from .randomization import simulate_fixed
from .streams import generate_blocked, mix_seed

__all__ = [
    "BaselineConfig",
    "finite_difference_greek",
    "likelihood_ratio_greek",
    "pathwise_greek",
    "weight_variance_experiment",
    "WeightVarianceResult",
]


@dataclass(frozen=True)
class BaselineConfig:
    """Finite-difference settings: bump size, scheme, and stream reuse."""

    epsilon: float
    use_common_randoms: bool = True
    scheme: str = "central"

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ConfigurationError("epsilon must be positive")
        if self.scheme not in ("forward", "central"):
            raise ConfigurationError("scheme must be 'forward' or 'central'")


def _admissible(model, lam: np.ndarray) -> bool:
    check = getattr(model, "admissible", None)
    if check is None:
        return True
    return bool(check(np.atleast_1d(np.asarray(lam, dtype=float))))


def _mean_report(contrib: np.ndarray, timing: float, echo: dict) -> EstimateReport:
    n, d = contrib.shape
    beta = contrib.mean(axis=0)
    centered = contrib - beta[None, :]
    asym_var = (centered.T @ centered) / (n - 1) / n if n > 1 else np.zeros((d, d))
    half = 1.96 * np.sqrt(np.diag(asym_var))
    return EstimateReport(
        beta_hat=beta,
        n_used=n,
        truncation_rate=0.0,
        asym_var=asym_var,
        ci_95=np.stack([beta - half, beta + half], axis=1),
        timing=timing,
        config_echo=echo,
        diagnostics={"estimator": echo.get("estimator", "")},
    )


def finite_difference_greek(model, payoff, lambda0, cfg: BaselineConfig,
                            n_draws: int, seed: int) -> EstimateReport:
    """Bump-and-revalue estimate of the sensitivity at lambda0."""
    t0 = time.perf_counter()
    if n_draws <= 0:
        raise ValueError("n_draws must be positive")
    lambda0 = np.atleast_1d(np.asarray(lambda0, dtype=float))
    d = lambda0.shape[0]
    eps = cfg.epsilon

    contrib = np.empty((n_draws, d))
    for a in range(d):
        bump = np.zeros(d)
        bump[a] = eps
        if cfg.scheme == "central":
            lo_lam, hi_lam = lambda0 - bump, lambda0 + bump
            denom = 2.0 * eps
        else:
            lo_lam, hi_lam = lambda0, lambda0 + bump
            denom = eps
        if not (_admissible(model, lo_lam) and _admissible(model, hi_lam)):
            raise ValueError("bumped parameter leaves the model's admissible domain")
        if cfg.use_common_randoms:
            seed_hi = seed_lo = seed
        else:
            seed_hi = mix_seed(seed, 2 * a + 1)
            seed_lo = mix_seed(seed, 2 * a + 2)
        phi_hi = payoff.evaluate(simulate_fixed(model, hi_lam, n_draws, seed_hi))
        phi_lo = payoff.evaluate(simulate_fixed(model, lo_lam, n_draws, seed_lo))
        contrib[:, a] = (phi_hi - phi_lo) / denom

    echo = {
        "estimator": "finite_difference",
        "epsilon": eps,
        "scheme": cfg.scheme,
        "common_randoms": cfg.use_common_randoms,
        "n_draws": n_draws,
        "seed": int(seed),
        "lambda0": lambda0.tolist(),
    }
    return _mean_report(contrib, time.perf_counter() - t0, echo)


def likelihood_ratio_greek(model, payoff, lambda0, n_draws: int, seed: int) -> EstimateReport:
    """Monte Carlo mean of payoff times analytic score at lambda0."""
    t0 = time.perf_counter()
    if n_draws <= 0:
        raise ValueError("n_draws must be positive")
    if not getattr(model, "has_score", False):
        raise ConfigurationError("likelihood-ratio estimation needs an analytic score")
    lambda0 = np.atleast_1d(np.asarray(lambda0, dtype=float))
    zs = simulate_fixed(model, lambda0, n_draws, seed)
    lams = np.tile(lambda0, (n_draws, 1))
    contrib = payoff.evaluate(zs)[:, None] * model.score_vector(lams, zs)
    echo = {
        "estimator": "likelihood_ratio",
        "n_draws": n_draws,
        "seed": int(seed),
        "lambda0": lambda0.tolist(),
    }
    return _mean_report(contrib, time.perf_counter() - t0, echo)


def pathwise_greek(model, payoff, lambda0, n_draws: int, seed: int) -> EstimateReport:
    """Monte Carlo mean of payoff derivative times the tangent process."""
    t0 = time.perf_counter()
    if n_draws <= 0:
        raise ValueError("n_draws must be positive")
    if payoff.derivative is None:
        raise ConfigurationError("pathwise estimation needs a payoff derivative")
    if not getattr(model, "has_tangent", False):
        raise ConfigurationError("pathwise estimation needs the model's tangent process")
    lambda0 = np.atleast_1d(np.asarray(lambda0, dtype=float))
    zs = simulate_fixed(model, lambda0, n_draws, seed)
    lams = np.tile(lambda0, (n_draws, 1))
    dphi = np.asarray(payoff.derivative(zs), dtype=float)
    tangent = np.asarray(model.tangent(lams, zs), dtype=float)
    contrib = np.einsum("in,ind->id", dphi, tangent)
    echo = {
        "estimator": "pathwise",
        "n_draws": n_draws,
        "seed": int(seed),
        "lambda0": lambda0.tolist(),
    }
    return _mean_report(contrib, time.perf_counter() - t0, echo)


@dataclass(frozen=True)
class WeightVarianceResult:
    """Sample covariances of the score weight and a noise-perturbed weight."""

    var_optimal: np.ndarray
    var_perturbed: np.ndarray
    mean_optimal: np.ndarray
    mean_perturbed: np.ndarray
    trace_diff: float
    trace_diff_se: float
    n_draws: int


def weight_variance_experiment(model, payoff, lambda0, n_draws: int,
                               noise_scale: float, seed: int) -> WeightVarianceResult:
    """Compare the score weight against score-plus-noise on shared draws.

    The perturbed weight keeps the score as its conditional mean, so both
    estimators are unbiased while the perturbed one carries extra variance.
    """
    if n_draws <= 0:
        raise ValueError("n_draws must be positive")
    if noise_scale < 0:
        raise ValueError("noise_scale must be nonnegative")
    if not getattr(model, "has_score", False):
        raise ConfigurationError("the experiment needs an analytic score")
    lambda0 = np.atleast_1d(np.asarray(lambda0, dtype=float))
    d = lambda0.shape[0]
    zs = simulate_fixed(model, lambda0, n_draws, seed)
    lams = np.tile(lambda0, (n_draws, 1))
    phi = payoff.evaluate(zs)
    s = model.score_vector(lams, zs)
    eta = noise_scale * generate_blocked(
        seed, "noise", n_draws, lambda g, c: g.standard_normal((c, d))
    )
    a = phi[:, None] * s
    b = phi[:, None] * (s + eta)

    def _cov(x):
        mu = x.mean(axis=0)
        c = x - mu[None, :]
        return (c.T @ c) / (n_draws - 1), mu

    var_opt, mu_a = _cov(a)
    var_pert, mu_b = _cov(b)
    sq_diff = (b**2).sum(axis=1) - (a**2).sum(axis=1)
    trace_diff = float(np.trace(var_pert) - np.trace(var_opt))
    trace_diff_se = float(sq_diff.std(ddof=1) / np.sqrt(n_draws))
    return WeightVarianceResult(
        var_optimal=var_opt,
        var_perturbed=var_pert,
        mean_optimal=mu_a,
        mean_perturbed=mu_b,
        trace_diff=trace_diff,
        trace_diff_se=trace_diff_se,
        n_draws=n_draws,
    )
