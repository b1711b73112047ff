"""Experiment driver: config parsing, estimator batteries, sweeps, CLT screen.

A JSON run configuration names the model, payoff, randomizer, kernels,
bandwidth rule and sweep grid. Each sweep cell (sample size, replication)
derives its own seed, draws its own samples and runs every applicable
estimator; cells are independent, so thread-level parallelism changes timing
only, never results.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from .bandwidth import BandwidthPlan, compute_rate_constants, optimal_bandwidth, undersmoothed_bandwidth
from .baselines import (
    BaselineConfig,
    finite_difference_greek,
    likelihood_ratio_greek,
    pathwise_greek,
)
from .errors import ConfigurationError
from .estimator import BinningConfig, EstimatorConfig, beta_bar_oracle, beta_tilde
from .kernels import ProductKernel, _standard_factor, make_high_order_kernel, make_standard_kernel
from .models import (
    BlackScholesModel,
    bs_true_greek,
    digital_payoff,
    euler_gbm_model,
    put_payoff,
    smoothed_put_payoff,
    truncated_call_payoff,
)
from .randomization import (
    PROFILES,
    RandomizingDensity,
    draw_sample,
    make_randomizing_density,
    profile_for_kernel,
)
from .streams import mix_seed

__all__ = ["RunConfig", "SweepResult", "run_single", "run_sweep", "clt_check", "load_config"]

ESTIMATOR_ORDER = ("beta_tilde", "beta_bar_oracle", "fd", "lr", "pathwise")


@dataclass
class RunConfig:
    """Parsed run configuration with built component objects."""

    raw: dict
    lambda0: np.ndarray
    model: object
    payoff: object
    payoff_kind: str
    payoff_strike: float
    payoff_barrier: float | None
    kernel_K: ProductKernel
    kernel_H: ProductKernel
    ell_profile: str
    ell_radius: float | None
    couple_radius_to_h: bool
    bandwidth_method: str
    bandwidth_h: float | None
    bandwidth_gamma: float
    pilot_draws: int
    h_inner: float | None
    delta: float | None
    binning: BinningConfig
    baseline: BaselineConfig
    noise_scale: float
    sweep_ns: list[int]
    replications: int
    base_seed: int
    run_n: int
    outputs: str

    _constants_cache: object = field(default=None, repr=False)

    # ---- component resolution -------------------------------------------

    def ell_for(self, h: float) -> RandomizingDensity:
        """Randomizing density, resolving coupled or automatic radii at a given bandwidth."""
        d = self.model.param_dim
        if self.couple_radius_to_h:
            radius = h
        elif self.ell_radius is not None:
            radius = self.ell_radius
        else:
            radius = 5.0 * h * float(np.max(self.kernel_K.support_radii))
        return make_randomizing_density(self.ell_profile, d, radius)

    def _constants(self):
        if self._constants_cache is None:
            if self.ell_radius is None:
                raise ConfigurationError(
                    "bandwidth planning needs an explicit ell.radius (auto/coupled radii "
                    "resolve only after h is known)"
                )
            ell = make_randomizing_density(self.ell_profile, self.model.param_dim, self.ell_radius)
            self._constants_cache = compute_rate_constants(
                self.model,
                self.payoff,
                ell,
                self.lambda0,
                self.kernel_K,
                self.kernel_H,
                method={"analytic": "analytic_quadrature", "pilot": "pilot_mc",
                        "rule_of_thumb": "rule_of_thumb"}[self.bandwidth_method],
                pilot_draws=self.pilot_draws,
                seed=mix_seed(self.base_seed, 0xBEEF),
            )
        return self._constants_cache

    def plan_for(self, n_draws: int) -> BandwidthPlan:
        if self.bandwidth_method == "fixed":
            if self.bandwidth_h is None:
                raise ConfigurationError("bandwidth.method 'fixed' needs bandwidth.h")
            return BandwidthPlan(
                h_star=float(self.bandwidth_h),
                rate_exponent=float("nan"),
                feasible=self.kernel_H.dimension
                < min(self.kernel_K.order, self.kernel_H.order) + 1,
                n_draws=n_draws,
                p=self.kernel_K.order,
                q=self.kernel_H.order,
                d=self.kernel_K.dimension,
                n=self.kernel_H.dimension,
            )
        return optimal_bandwidth(
            self._constants(),
            n_draws,
            self.kernel_K.order,
            self.kernel_H.order,
            self.kernel_K.dimension,
            n=self.kernel_H.dimension,
        )

    def h_for(self, n_draws: int) -> float:
        return self.plan_for(n_draws).h_star

    def estimator_config(self, h: float) -> EstimatorConfig:
        return EstimatorConfig(
            h=h,
            kernel_K=self.kernel_K,
            kernel_H=self.kernel_H,
            delta=self.delta,
            h_inner=self.h_inner,
            binning=self.binning,
        )

    def true_greek(self) -> float | None:
        if not isinstance(self.model, BlackScholesModel):
            return None
        if self.payoff_kind in ("put", "digital", "truncated_call"):
            return bs_true_greek(
                self.model,
                self.payoff_kind,
                self.payoff_strike,
                float(self.lambda0[0]),
                barrier=self.payoff_barrier,
            )
        if self.payoff_kind == "smoothed_put":
            # score identity: the sensitivity is the payoff integrated against
            # density times analytic score
            from scipy import integrate

            lam0 = float(self.lambda0[0])
            lo, hi = self.payoff.support_box[0]
            val, _ = integrate.quad(
                lambda z: float(self.payoff.evaluate(np.array([z])))
                * float(self.model.score(lam0, z))
                * self.model.density(lam0, z),
                lo,
                hi,
                limit=300,
            )
            return float(val)
        return None


def _build_model(block: dict):
    kind = block.get("type", "black_scholes")
    if kind == "black_scholes":
        return BlackScholesModel(r=block["r"], sigma=block["sigma"], T=block["T"])
    if kind == "euler_gbm":
        return euler_gbm_model(
            r=block["r"], sigma=block["sigma"], T=block["T"], steps=int(block.get("steps", 64))
        )
    if kind == "euler_custom":
        raise ConfigurationError(
            "model.type 'euler_custom' needs Python coefficient callables; construct an "
            "EulerDiffusionModel through the library API instead of a JSON config"
        )
    raise ConfigurationError(f"unknown model.type {kind!r}")


def _build_payoff(block: dict, model):
    kind = block.get("type", "put")
    strike = float(block.get("strike", 100.0))
    barrier = block.get("barrier")
    bs = model if isinstance(model, BlackScholesModel) else None
    if kind == "put":
        return put_payoff(strike, bs, z_min_frac=float(block.get("zmin", 1e-3))), kind, strike, None
    if kind == "digital":
        upper = float(barrier) if barrier is not None else np.inf
        return digital_payoff(strike, upper=upper), kind, strike, barrier
    if kind == "truncated_call":
        if barrier is None:
            raise ConfigurationError("payoff.type 'truncated_call' needs payoff.barrier")
        return truncated_call_payoff(strike, float(barrier), bs), kind, strike, float(barrier)
    if kind == "smoothed_put":
        lower = block.get("lower", [0.55 * strike, 0.65 * strike])
        return smoothed_put_payoff(strike, (float(lower[0]), float(lower[1])), bs), kind, strike, None
    raise ConfigurationError(f"unknown payoff.type {kind!r}")


def _build_kernel(block: dict, dimension: int) -> ProductKernel:
    name = block.get("name", "epanechnikov")
    order = int(block.get("order", 2))
    scale = float(block.get("scale", 1.0))
    if order == 2:
        return make_standard_kernel(name, dimension, scale=scale)
    return make_high_order_kernel(_standard_factor(name, scale), order, dimension)


def load_config(source) -> RunConfig:
    """Parse a JSON run configuration from a path, JSON string or dict."""
    if isinstance(source, dict):
        raw = source
    else:
        text = Path(source).read_text() if Path(str(source)).exists() else str(source)
        raw = json.loads(text)

    lambda0 = np.atleast_1d(np.asarray(raw.get("lambda0", 100.0), dtype=float))
    model = _build_model(raw.get("model", {"type": "black_scholes", "r": 0.05, "sigma": 0.2, "T": 1.0}))
    payoff, kind, strike, barrier = _build_payoff(raw.get("payoff", {}), model)
    kernel_K = _build_kernel(raw.get("kernel_K", {}), model.param_dim)
    kernel_H = _build_kernel(raw.get("kernel_H", {}), model.state_dim)

    ell_block = raw.get("ell", {})
    profile = ell_block.get("profile", "epanechnikov_product")
    if ell_block.get("match_kernel", False):
        profile = profile_for_kernel(raw.get("kernel_K", {}).get("name", "epanechnikov"))
    radius = ell_block.get("radius")
    radius = None if radius in (None, "auto") else float(radius)
    if profile not in PROFILES:
        raise ConfigurationError(f"unknown ell.profile {profile!r}")

    est_block = raw.get("estimator", {})
    delta = est_block.get("delta", "auto")
    delta = None if delta in (None, "auto") else float(delta)
    bin_block = est_block.get("binning", {})
    binning = BinningConfig(
        enabled=bool(bin_block.get("enabled", True)),
        cell_size=None if bin_block.get("cell_size") in (None, "auto") else float(bin_block["cell_size"]),
    )
    h_inner = est_block.get("h_inner")
    h_inner = None if h_inner in (None, "auto") else float(h_inner)

    bw_block = dict(raw.get("bandwidth", {}))
    if est_block.get("h") is not None:
        # estimator.h is shorthand for a fixed bandwidth
        bw_block["method"] = "fixed"
        bw_block["h"] = float(est_block["h"])
    method = bw_block.get("method", "analytic")
    if method not in ("analytic", "pilot", "rule_of_thumb", "fixed"):
        raise ConfigurationError(f"unknown bandwidth.method {method!r}")

    base_block = raw.get("baseline", {})
    baseline = BaselineConfig(
        epsilon=float(base_block.get("epsilon", 0.01 * abs(float(lambda0[0])) or 0.01)),
        use_common_randoms=bool(base_block.get("common_randoms", True)),
        scheme=base_block.get("scheme", "central"),
    )

    sweep_block = raw.get("sweep", {})
    ns = [int(x) for x in sweep_block.get("Ns", [4000, 8000, 16000, 32000, 64000])]
    if any(b <= a for a, b in zip(ns, ns[1:])):
        raise ConfigurationError("sweep.Ns must be strictly increasing")
    replications = int(sweep_block.get("replications", 1))
    if replications < 1:
        raise ConfigurationError("sweep.replications must be >= 1")

    return RunConfig(
        raw=raw,
        lambda0=lambda0,
        model=model,
        payoff=payoff,
        payoff_kind=kind,
        payoff_strike=strike,
        payoff_barrier=barrier,
        kernel_K=kernel_K,
        kernel_H=kernel_H,
        ell_profile=profile,
        ell_radius=radius,
        couple_radius_to_h=bool(ell_block.get("couple_radius_to_h", False)),
        bandwidth_method=method,
        bandwidth_h=None if bw_block.get("h") is None else float(bw_block["h"]),
        bandwidth_gamma=float(bw_block.get("gamma", 0.6)),
        pilot_draws=int(bw_block.get("pilot_draws", 4096)),
        h_inner=h_inner,
        delta=delta,
        binning=binning,
        baseline=baseline,
        noise_scale=float(base_block.get("noise_scale", 1.0)),
        sweep_ns=ns,
        replications=replications,
        base_seed=int(sweep_block.get("seeds", 0)),
        run_n=int(raw.get("run", {}).get("n_draws", ns[-1])),
        outputs=str(raw.get("outputs", "out")),
    )


def run_single(cfg: RunConfig, n_draws: int, seed: int, h: float | None = None) -> dict:
    """One estimation cell: every applicable estimator at the given size/seed.

    Returns estimator-name -> EstimateReport (or an error string under
    'errors' for estimators that failed).
    """
    if h is None:
        h = cfg.h_for(n_draws)
    ell = cfg.ell_for(h)
    est_cfg = cfg.estimator_config(h)
    results: dict = {"h": h, "seed": int(seed), "errors": {}}

    sample = draw_sample(cfg.model, ell, cfg.lambda0, n_draws, mix_seed(seed, 1))
    plain_seed = mix_seed(seed, 2)
    fd_seed = mix_seed(seed, 3)

    def attempt(name, fn):
        try:
            results[name] = fn()
        except Exception as exc:  # per-cell failures are recorded, not fatal
            results["errors"][name] = f"{type(exc).__name__}: {exc}"

    attempt("beta_tilde", lambda: beta_tilde(sample, est_cfg, ell, cfg.lambda0, cfg.payoff))
    if getattr(cfg.model, "has_score", False):
        attempt(
            "beta_bar_oracle",
            lambda: beta_bar_oracle(
                sample, est_cfg, ell, cfg.lambda0, cfg.payoff, cfg.model.score_vector
            ),
        )
        attempt(
            "lr",
            lambda: likelihood_ratio_greek(cfg.model, cfg.payoff, cfg.lambda0, n_draws, plain_seed),
        )
    if getattr(cfg.model, "has_tangent", False) and cfg.payoff.derivative is not None:
        attempt(
            "pathwise",
            lambda: pathwise_greek(cfg.model, cfg.payoff, cfg.lambda0, n_draws, plain_seed),
        )
    attempt(
        "fd",
        lambda: finite_difference_greek(
            cfg.model, cfg.payoff, cfg.lambda0, cfg.baseline, n_draws, fd_seed
        ),
    )
    return results


@dataclass
class SweepResult:
    """Per-cell estimates plus per-size aggregates and fitted rate slopes."""

    rows: list
    aggregates: list
    slopes: dict
    h_by_n: dict
    beta_true: float | None
    base_seed: int
    config_echo: dict
    failed_cells: int
    total_cells: int

    @property
    def var_scaling_ratio(self) -> float | None:
        """Max/min of Var * N * h^(d+2) across sizes for the double-kernel rows."""
        vals = [
            a["var_scaled"]
            for a in self.aggregates
            if a["estimator"] == "beta_tilde" and a["var_scaled"] is not None
        ]
        if not vals or min(vals) <= 0:
            return None
        return max(vals) / min(vals)


def _cell_seed(base: int, n_draws: int, rep: int) -> int:
    return mix_seed(base, n_draws, rep)


def run_sweep(cfg: RunConfig, threads: int = 1) -> SweepResult:
    """Convergence sweep over sample sizes with replications.

    Any estimator failure is recorded per cell; the sweep itself fails only
    when more than 10% of cells report a failure.
    """
    d = cfg.model.param_dim
    h_by_n = {n: cfg.h_for(n) for n in cfg.sweep_ns}
    cells = [(n, rep) for n in cfg.sweep_ns for rep in range(cfg.replications)]

    def work(cell):
        n, rep = cell
        return cell, run_single(cfg, n, _cell_seed(cfg.base_seed, n, rep), h=h_by_n[n])

    results = {}
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            for cell, res in pool.map(work, cells):
                results[cell] = res
    else:
        for cell in cells:
            results[cell] = work(cell)[1]

    beta_true = cfg.true_greek()
    rows = []
    failed = 0
    for n, rep in cells:
        res = results[(n, rep)]
        if res["errors"]:
            failed += 1
        for name in ESTIMATOR_ORDER:
            if name not in res:
                continue
            report = res[name]
            rows.append(
                {
                    "estimator": name,
                    "N": n,
                    "rep": rep,
                    "seed": res["seed"],
                    "h": res["h"],
                    "estimate": report.beta_hat.copy(),
                    "se": report.se.copy(),
                }
            )
    if failed > 0.10 * len(cells):
        raise RuntimeError(f"sweep failed: {failed}/{len(cells)} cells reported estimator errors")

    aggregates = []
    for name in ESTIMATOR_ORDER:
        for n in cfg.sweep_ns:
            cell_rows = [r for r in rows if r["estimator"] == name and r["N"] == n]
            if not cell_rows:
                continue
            est = np.stack([r["estimate"] for r in cell_rows])
            ses = np.stack([r["se"] for r in cell_rows])
            mean = est.mean(axis=0)
            variance = float(np.mean(np.sum((est - mean) ** 2, axis=1)))
            agg = {
                "estimator": name,
                "N": n,
                "h": h_by_n[n],
                "replications": len(cell_rows),
                "variance": variance,
            }
            if beta_true is not None:
                bias_vec = mean - beta_true
                agg["bias"] = float(np.linalg.norm(bias_vec)) * np.sign(bias_vec[0] if d == 1 else 1.0)
                agg["mse"] = float(np.mean(np.sum((est - beta_true) ** 2, axis=1)))
                agg["mse_se"] = float(
                    np.std(np.sum((est - beta_true) ** 2, axis=1), ddof=1) / np.sqrt(len(cell_rows))
                ) if len(cell_rows) > 1 else 0.0
                pivots = (est[:, 0] - beta_true) / ses[:, 0]
                agg["pivot_mean"] = float(pivots.mean())
                agg["pivot_var"] = float(pivots.var(ddof=0))
            else:
                agg["bias"] = None
                agg["mse"] = None
                agg["mse_se"] = None
                agg["pivot_mean"] = None
                agg["pivot_var"] = None
            if name in ("beta_tilde", "beta_bar_oracle"):
                agg["var_scaled"] = variance * n * h_by_n[n] ** (d + 2)
            else:
                agg["var_scaled"] = None
            aggregates.append(agg)

    slopes = {}
    if beta_true is not None and len(cfg.sweep_ns) >= 4:
        for name in ESTIMATOR_ORDER:
            pts = [a for a in aggregates if a["estimator"] == name and a["mse"]]
            if len(pts) < 4:
                continue
            slopes[name] = _wls_slope(
                np.array([a["N"] for a in pts], dtype=float),
                np.array([a["mse"] for a in pts]),
                np.array([max(a["mse_se"], 1e-300) for a in pts]),
            )

    return SweepResult(
        rows=rows,
        aggregates=aggregates,
        slopes=slopes,
        h_by_n=h_by_n,
        beta_true=beta_true,
        base_seed=cfg.base_seed,
        config_echo=cfg.raw,
        failed_cells=failed,
        total_cells=len(cells),
    )


def _wls_slope(ns: np.ndarray, mse: np.ndarray, mse_se: np.ndarray) -> dict:
    """Weighted least squares of log MSE on log N; weights from replication noise."""
    x = np.log(ns)
    y = np.log(mse)
    sig = np.maximum(mse_se / mse, 1e-9)  # se of log(mse) by the delta method
    w = 1.0 / sig**2
    wx = np.sum(w * x) / np.sum(w)
    wy = np.sum(w * y) / np.sum(w)
    sxx = np.sum(w * (x - wx) ** 2)
    slope = float(np.sum(w * (x - wx) * (y - wy)) / sxx)
    intercept = float(wy - slope * wx)
    slope_se = float(np.sqrt(1.0 / sxx))
    return {"slope": slope, "slope_se": slope_se, "intercept": intercept}


def clt_check(cfg: RunConfig, n_draws: int, h: float, replications: int,
              threads: int = 1) -> dict:
    """Moment screen of the standardized estimator pivot over replications.

    The pivot divides the centered estimate by its reported asymptotic
    standard error, so passing requires both approximate normality and a
    calibrated variance plug-in. The pass bands assume an undersmoothed
    bandwidth; running with an oversmoothed one is the intended way to show
    the screen catching a bias-dominant configuration.
    """
    if replications < 200:
        raise ValueError("the moment bands are calibrated for at least 200 replications")
    beta_true = cfg.true_greek()
    if beta_true is None:
        raise ConfigurationError("clt_check needs a model/payoff with a known sensitivity")

    ell = cfg.ell_for(h)
    est_cfg = cfg.estimator_config(h)

    def work(rep):
        seed = mix_seed(cfg.base_seed, n_draws, rep, 5)
        sample = draw_sample(cfg.model, ell, cfg.lambda0, n_draws, mix_seed(seed, 1))
        report = beta_tilde(sample, est_cfg, ell, cfg.lambda0, cfg.payoff)
        return rep, (report.beta_hat[0] - beta_true) / report.se[0]

    pivots = np.empty(replications)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            for rep, piv in pool.map(work, range(replications)):
                pivots[rep] = piv
    else:
        for rep in range(replications):
            pivots[rep] = work(rep)[1]

    pivot_mean = float(pivots.mean())
    pivot_var = float(pivots.var(ddof=0))
    skewness = float(stats.skew(pivots))
    excess_kurtosis = float(stats.kurtosis(pivots))
    mean_band = 4.0 / np.sqrt(replications)
    d = cfg.model.param_dim
    pq = min(cfg.kernel_K.order, cfg.kernel_H.order)
    out = {
        "n_draws": n_draws,
        "h": h,
        "replications": replications,
        "pivot_mean": pivot_mean,
        "pivot_var": pivot_var,
        "skewness": skewness,
        "excess_kurtosis": excess_kurtosis,
        "mean_band": float(mean_band),
        "undersmooth_condition": float(n_draws * h ** (d + 2 + 2 * pq)),
        "pass": bool(
            abs(pivot_mean) < mean_band
            and abs(pivot_var - 1.0) < 0.35
            and abs(skewness) < 0.5
            and abs(excess_kurtosis) < 1.0
        ),
        "pivots": [float(p) for p in pivots],
    }
    return out


def undersmoothed_h(cfg: RunConfig, n_draws: int) -> float:
    """Planned bandwidth shrunk by the configured undersmoothing exponent."""
    plan = cfg.plan_for(n_draws)
    return undersmoothed_bandwidth(plan, cfg.bandwidth_gamma)
