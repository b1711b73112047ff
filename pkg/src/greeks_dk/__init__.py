"""Double-kernel Monte Carlo sensitivity estimation.

A library plus a ``greeks-dk`` command line for estimating parameter
sensitivities of simulated expectations: the double-kernel estimator built on
parameter randomization and leave-one-out score estimation, classical
baselines (finite differences, likelihood ratio, pathwise), plug-in bandwidth
selection, and a benchmark harness that sweeps sample sizes, decomposes bias
and variance, and screens the limiting normal law.
"""

from .bandwidth import (
    BandwidthPlan,
    RateConstants,
    compute_rate_constants,
    optimal_bandwidth,
    undersmoothed_bandwidth,
)
from .baselines import (
    BaselineConfig,
    WeightVarianceResult,
    finite_difference_greek,
    likelihood_ratio_greek,
    pathwise_greek,
    weight_variance_experiment,
)
from .errors import (
    ConfigurationError,
    DegeneratePlanError,
    DomainError,
    EstimationError,
    GreeksDkError,
    KernelConstructionError,
    NumericsError,
    OrderVerificationError,
    SimulationError,
)
from .estimator import (
    BinningConfig,
    EstimateReport,
    EstimatorConfig,
    LooDensityEval,
    beta_bar_oracle,
    beta_tilde,
    loo_density,
    score_hat,
)
from .kernels import (
    KernelConstants,
    ProductKernel,
    UnivariateKernel,
    compute_kernel_constants,
    make_high_order_kernel,
    make_standard_kernel,
    verify_order,
)
from .models import (
    BlackScholesModel,
    EulerDiffusionModel,
    Payoff,
    bs_score,
    bs_true_greek,
    bs_true_value,
    digital_payoff,
    euler_gbm_model,
    euler_simulate,
    identity_payoff,
    put_payoff,
    smoothed_put_payoff,
    truncated_call_payoff,
)
from .randomization import (
    RandomizedSample,
    RandomizingDensity,
    draw_sample,
    log_grad_ell,
    make_randomizing_density,
    profile_for_kernel,
    simulate_fixed,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
