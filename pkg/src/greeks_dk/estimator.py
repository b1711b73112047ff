"""Double-kernel sensitivity estimator and its score-oracle counterpart.

The chain: a leave-one-out kernel estimate of the joint density of the
randomized parameter and the simulated state, its parameter-gradient, a
truncated score estimate built from their ratio plus the randomizer's
log-derivative, and finally the weighted average that estimates the
sensitivity at the center point. A cell-list neighbor engine makes the
leave-one-out sums exact while skipping all zero-weight kernel terms.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import _fast
from .errors import ConfigurationError, DomainError, EstimationError
from .kernels import ProductKernel, compute_kernel_constants
from .randomization import FLOOR_EPS, RandomizedSample, RandomizingDensity, log_grad_ell

__all__ = [
    "BinningConfig",
    "EstimatorConfig",
    "LooDensityEval",
    "EstimateReport",
    "loo_density",
    "score_hat",
    "beta_tilde",
    "beta_bar_oracle",
]

# For small sources, pair batches are sorted into ascending (query, source)
# order so the accumulation order matches a naive double loop exactly.
_SORT_SRC_LIMIT = 20_000
_SORT_LIMIT = 1 << 22
_QUERY_CHUNK = 2048
_NAIVE_CHUNK = 128


@dataclass(frozen=True)
class BinningConfig:
    """Cell-list acceleration switch.

    ``cell_size`` is an absolute per-dimension cell width; by default each
    dimension uses the kernel's support reach (bandwidth times support
    radius), which makes the single-ring cell scan exact.
    """

    enabled: bool = True
    cell_size: float | None = None


@dataclass(frozen=True, eq=False)
class EstimatorConfig:
    """Bandwidths, truncation floor, kernels and acceleration settings.

    ``delta=None`` requests the automatic truncation floor (a pilot density
    estimate resolved at estimation time). ``h_inner`` is the bandwidth for
    the density/score stage; it defaults to the outer bandwidth ``h``.
    """

    h: float
    kernel_K: ProductKernel
    kernel_H: ProductKernel
    delta: float | None = None
    h_inner: float | None = None
    binning: BinningConfig = field(default_factory=BinningConfig)

    def __post_init__(self):
        if not self.h > 0:
            raise ConfigurationError("bandwidth h must be positive")
        if self.delta is not None and not self.delta > 0:
            raise ConfigurationError("truncation floor delta must be positive")
        if self.h_inner is not None and not self.h_inner > 0:
            raise ConfigurationError("inner bandwidth must be positive")

    @property
    def feasible(self) -> bool:
        """State dimension versus kernel order requirement n < (p^q) + 1."""
        return self.kernel_H.dimension < min(self.kernel_K.order, self.kernel_H.order) + 1

    def bandwidth_diagnostics(self, n_draws: int) -> dict:
        """Sample-size/bandwidth balance diagnostics, reported not enforced.

        ``literal`` uses the stated exponent d + n + n*sqrt(2); ``corrected``
        uses d + n, the combination the error analysis actually exercises.
        Both should tend to zero along a sound schedule.
        """
        d = self.kernel_K.dimension
        n = self.kernel_H.dimension
        log4 = np.log(n_draws) ** 4
        return {
            "feasible": self.feasible,
            "literal_313": float(log4 / (n_draws * self.h ** (d + n + n * np.sqrt(2.0)))),
            "corrected_313": float(log4 / (n_draws * self.h ** (d + n))),
        }


@dataclass(frozen=True)
class LooDensityEval:
    """Leave-one-out density value, parameter gradient and truncation state."""

    value: float
    grad: np.ndarray
    truncated_value: float
    was_truncated: bool


@dataclass()
class EstimateReport:
    """Point estimate with variance, confidence interval and diagnostics."""

    beta_hat: np.ndarray
    n_used: int
    truncation_rate: float
    asym_var: np.ndarray
    ci_95: np.ndarray
    timing: float
    config_echo: dict
    diagnostics: dict = field(default_factory=dict)

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.diag(self.asym_var))

    def ci(self, z: float) -> np.ndarray:
        half = z * self.se
        return np.stack([self.beta_hat - half, self.beta_hat + half], axis=1)

    def to_dict(self) -> dict:
        return {
            "beta_hat": self.beta_hat.tolist(),
            "n_used": self.n_used,
            "truncation_rate": self.truncation_rate,
            "asym_var": self.asym_var.tolist(),
            "ci_95": self.ci_95.tolist(),
            "timing": self.timing,
            "config_echo": self.config_echo,
            "diagnostics": self.diagnostics,
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)


def _loo_sums(
    lambdas: np.ndarray,
    zs: np.ndarray,
    q_l: np.ndarray,
    q_z: np.ndarray,
    exclude: np.ndarray | None,
    h: float,
    kernel_K: ProductKernel,
    kernel_H: ProductKernel,
    binning: BinningConfig,
):
    """Kernel sums over sources j for each query point.

    Returns ``(S, G)`` with ``S[q] = sum_j K((ql-L_j)/h) H((qz-Z_j)/h)`` and
    ``G[q] = sum_j gradK(...) H(...)``; ``exclude[q]`` (or -1) names one source
    index dropped from query q's sums. The binned path visits only cells that
    can intersect the kernel support, so it sums exactly the nonzero terms of
    the naive double loop.
    """
    n_src = lambdas.shape[0]
    n_q = q_l.shape[0]
    d = lambdas.shape[1]
    S = np.zeros(n_q)
    G = np.zeros((n_q, d))
    if n_q == 0:
        return S, G
    exc = np.full(n_q, -1, dtype=np.int64) if exclude is None else np.asarray(exclude, dtype=np.int64)

    if (
        binning.enabled
        and binning.cell_size is None
        and _fast.fast_path_available(kernel_K, kernel_H, d, zs.shape[1])
    ):
        return _fast.fast_sums_1d(lambdas, zs, q_l, q_z, exc, h, kernel_K, kernel_H)

    if not binning.enabled:
        for lo in range(0, n_q, _NAIVE_CHUNK):
            sl = slice(lo, min(lo + _NAIVE_CHUNK, n_q))
            dl = (q_l[sl, None, :] - lambdas[None, :, :]) / h
            dz = (q_z[sl, None, :] - zs[None, :, :]) / h
            w = kernel_K.evaluate(dl) * kernel_H.evaluate(dz)
            gw = kernel_K.gradient(dl) * kernel_H.evaluate(dz)[..., None]
            rows = np.nonzero(exc[sl] >= 0)[0]
            if rows.size:
                w[rows, exc[sl][rows]] = 0.0
                gw[rows, exc[sl][rows], :] = 0.0
            S[sl] = w.sum(axis=1)
            G[sl] = gw.sum(axis=1)
        return S, G

    points = np.concatenate([lambdas, zs], axis=1)
    queries = np.concatenate([q_l, q_z], axis=1)
    dims = points.shape[1]
    radii = np.concatenate([kernel_K.support_radii, kernel_H.support_radii])
    reach = h * radii
    if binning.cell_size is not None:
        if not binning.cell_size > 0:
            raise ConfigurationError("binning cell_size must be positive")
        cell = np.full(dims, float(binning.cell_size))
    else:
        cell = reach.copy()
    window = np.maximum(np.ceil(reach / cell - 1e-12).astype(np.int64), 1)

    origin = np.minimum(points.min(axis=0), queries.min(axis=0))
    coords = np.floor((points - origin) / cell).astype(np.int64) + window
    qcoords = np.floor((queries - origin) / cell).astype(np.int64) + window
    extents = np.maximum(coords.max(axis=0), qcoords.max(axis=0)) + window + 1
    if float(np.prod(extents.astype(float))) >= 2**62:
        raise ConfigurationError("binning cell_size is too small for the data extent")

    strides = np.ones(dims, dtype=np.int64)
    for k in range(dims - 2, -1, -1):
        strides[k] = strides[k + 1] * extents[k + 1]
    pid = coords @ strides
    order = np.argsort(pid, kind="stable")
    pid_sorted = pid[order]
    qid = qcoords @ strides

    offset_ids = []
    grids = np.meshgrid(*[np.arange(-w, w + 1) for w in window], indexing="ij")
    for off in np.stack([g.ravel() for g in grids], axis=1):
        offset_ids.append(int(off @ strides))

    for lo in range(0, n_q, _QUERY_CHUNK):
        hi = min(lo + _QUERY_CHUNK, n_q)
        qid_c = qid[lo:hi]
        pq_parts = []
        pj_parts = []
        for oid in offset_ids:
            target = qid_c + oid
            left = np.searchsorted(pid_sorted, target, side="left")
            right = np.searchsorted(pid_sorted, target, side="right")
            counts = right - left
            total = int(counts.sum())
            if total == 0:
                continue
            base = np.repeat(left, counts)
            cum = np.concatenate([[0], np.cumsum(counts)[:-1]])
            within = np.arange(total) - np.repeat(cum, counts)
            pj_parts.append(order[base + within])
            pq_parts.append(np.repeat(np.arange(hi - lo), counts))
        if not pq_parts:
            continue
        pq = np.concatenate(pq_parts)
        pj = np.concatenate(pj_parts)
        keep = pj != exc[lo:hi][pq]
        pq = pq[keep]
        pj = pj[keep]
        if not pq.size:
            continue
        if n_src <= _SORT_SRC_LIMIT and pq.size <= _SORT_LIMIT:
            srt = np.lexsort((pj, pq))
            pq = pq[srt]
            pj = pj[srt]
        dl = q_l[lo:hi][pq]
        dl -= lambdas[pj]
        dl /= h
        dz = q_z[lo:hi][pq]
        dz -= zs[pj]
        dz /= h
        hv = kernel_H.evaluate(dz)
        w = kernel_K.evaluate(dl)
        w *= hv
        gw = kernel_K.gradient(dl)
        gw *= hv[:, None]
        S[lo:hi] = np.bincount(pq, weights=w, minlength=hi - lo)
        for a in range(d):
            G[lo:hi, a] = np.bincount(pq, weights=gw[:, a], minlength=hi - lo)
    return S, G


def _truncate(value: np.ndarray, delta: float):
    """Floor the density estimate away from zero per the truncation rule.

    Values with magnitude below delta/3 are replaced by delta/3 (strict
    inequality; the boundary set has measure zero).
    """
    mask = np.abs(value) < delta / 3.0
    return np.where(mask, delta / 3.0, value), mask


def loo_density(
    sample: RandomizedSample,
    cfg: EstimatorConfig,
    i: int,
    lam: np.ndarray,
    z: np.ndarray,
) -> LooDensityEval:
    """Leave-one-out joint density estimate and parameter gradient at (lam, z).

    Sums kernel terms over every draw except index ``i`` (0-based). Requires a
    numeric truncation floor in the config.
    """
    n = sample.n_draws
    if n < 2:
        raise ValueError("leave-one-out estimation needs at least 2 draws")
    if not 0 <= i < n:
        raise ValueError(f"index {i} outside 0..{n - 1}")
    if cfg.delta is None:
        raise ConfigurationError(
            "loo_density needs a numeric delta; automatic selection runs inside beta_tilde"
        )
    d = sample.param_dim
    n_state = sample.state_dim
    h_in = cfg.h_inner if cfg.h_inner is not None else cfg.h
    q_l = np.atleast_1d(np.asarray(lam, dtype=float)).reshape(1, d)
    q_z = np.atleast_1d(np.asarray(z, dtype=float)).reshape(1, n_state)
    S, G = _loo_sums(
        sample.lambdas, sample.zs, q_l, q_z, np.array([i]), h_in,
        cfg.kernel_K, cfg.kernel_H, cfg.binning,
    )
    value = float(S[0] * h_in ** (-d - n_state) / (n - 1))
    grad = G[0] * h_in ** (-d - n_state - 1) / (n - 1)
    truncated, mask = _truncate(np.array([value]), cfg.delta)
    return LooDensityEval(
        value=value,
        grad=grad,
        truncated_value=float(truncated[0]),
        was_truncated=bool(mask[0]),
    )


def score_hat(
    sample: RandomizedSample,
    cfg: EstimatorConfig,
    ell: RandomizingDensity,
    lambda0: np.ndarray,
    i: int,
    lam: np.ndarray,
    z: np.ndarray,
) -> np.ndarray:
    """Truncated leave-one-out score estimate at (lam, z), excluding draw i."""
    loo = loo_density(sample, cfg, i, lam, z)
    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    lambda0 = np.atleast_1d(np.asarray(lambda0, dtype=float))
    return loo.grad / loo.truncated_value + log_grad_ell(ell, lam, lambda0)


def _auto_delta(sample: RandomizedSample, payoff, h_in: float, cfg: EstimatorConfig,
                lambda0: np.ndarray) -> float:
    """Pilot truncation floor: half the minimum pilot density over the payoff
    region near the center point, floored at 1e-4."""
    n = sample.n_draws
    n_state = sample.state_dim
    box = payoff.floor_box if payoff.floor_box is not None else payoff.support_box
    axes = []
    for k in range(n_state):
        lo = max(box[k, 0], float(sample.zs[:, k].min()))
        hi = min(box[k, 1], float(sample.zs[:, k].max()))
        if not lo < hi:
            lo, hi = float(sample.zs[:, k].min()), float(sample.zs[:, k].max())
        axes.append(np.linspace(lo, hi, 33))
    mesh = np.meshgrid(*axes, indexing="ij")
    q_z = np.stack([m.ravel() for m in mesh], axis=1)
    q_l = np.broadcast_to(lambda0, (q_z.shape[0], sample.param_dim))
    S, _ = _loo_sums(
        sample.lambdas, sample.zs, np.ascontiguousarray(q_l), q_z, None, h_in,
        cfg.kernel_K, cfg.kernel_H, cfg.binning,
    )
    pilot = S * h_in ** (-sample.param_dim - n_state) / n
    return max(0.5 * float(pilot.min()), 1e-4)


def _sigma_plugin(cfg: EstimatorConfig, ell: RandomizingDensity, phi: np.ndarray,
                  w: np.ndarray, lambda0: np.ndarray) -> np.ndarray:
    """Plug-in asymptotic variance matrix: kernel-weighted payoff second moment
    over the outer window, divided by the randomizer's center value, times the
    kernel-only variance factor."""
    ell0 = float(ell.evaluate(np.zeros(ell.dimension)))
    wsum = float(w.sum())
    phi2 = float((phi**2 * w).sum() / wsum) if wsum > 0 else 0.0
    constants = compute_kernel_constants(cfg.kernel_K, cfg.kernel_H)
    return (phi2 / ell0) * constants.sigma_factor


def beta_tilde(
    sample: RandomizedSample,
    cfg: EstimatorConfig,
    ell: RandomizingDensity,
    lambda0,
    payoff,
) -> EstimateReport:
    """Double-kernel sensitivity estimate at lambda0.

    Terms with zero outer kernel weight are skipped entirely (no score
    evaluation), as are terms whose payoff vanishes; both contribute exactly
    zero. The reported truncation rate is the truncated fraction of the points
    where the score was actually evaluated.
    """
    t0 = time.perf_counter()
    n = sample.n_draws
    if n < 2:
        raise ValueError("beta_tilde needs at least 2 draws")
    d = sample.param_dim
    n_state = sample.state_dim
    if cfg.kernel_K.dimension != d or cfg.kernel_H.dimension != n_state:
        raise ConfigurationError("kernel dimensions must match the sample")
    lambda0 = np.atleast_1d(np.asarray(lambda0, dtype=float))
    h = cfg.h
    h_in = cfg.h_inner if cfg.h_inner is not None else h

    w = cfg.kernel_K.evaluate((lambda0[None, :] - sample.lambdas) / h)
    n_used = int(np.count_nonzero(w))
    if n_used == 0:
        raise EstimationError(
            "no draw received outer kernel weight; increase the bandwidth or the sample size"
        )
    phi = payoff.evaluate(sample.zs)
    delta = cfg.delta if cfg.delta is not None else _auto_delta(sample, payoff, h_in, cfg, lambda0)

    idx = np.nonzero((w != 0.0) & (phi != 0.0))[0]
    ell0 = float(ell.evaluate(np.zeros(d)))
    if idx.size:
        S, G = _loo_sums(
            sample.lambdas, sample.zs, sample.lambdas[idx], sample.zs[idx], idx,
            h_in, cfg.kernel_K, cfg.kernel_H, cfg.binning,
        )
        value = S * h_in ** (-d - n_state) / (n - 1)
        grad = G * h_in ** (-d - n_state - 1) / (n - 1)
        truncated, trunc_mask = _truncate(value, delta)
        u_ell = lambda0[None, :] - sample.lambdas[idx]
        ell_vals = ell.evaluate(u_ell)
        if np.any(ell_vals <= FLOOR_EPS):
            raise DomainError("a weighted draw sits outside the randomizer support")
        shat = grad / truncated[:, None] + ell.gradient(u_ell) / ell_vals[:, None]
        beta = ((phi[idx] * w[idx])[:, None] * shat).sum(axis=0) / (ell0 * n * h**d)
        truncation_rate = float(trunc_mask.mean())
    else:
        beta = np.zeros(d)
        truncation_rate = 0.0

    sigma_hat = _sigma_plugin(cfg, ell, phi, w, lambda0)
    asym_var = sigma_hat / (n * h ** (d + 2))
    timing = time.perf_counter() - t0
    report = EstimateReport(
        beta_hat=beta,
        n_used=n_used,
        truncation_rate=truncation_rate,
        asym_var=asym_var,
        ci_95=np.stack([beta - 1.96 * np.sqrt(np.diag(asym_var)),
                        beta + 1.96 * np.sqrt(np.diag(asym_var))], axis=1),
        timing=timing,
        config_echo=_echo(cfg, sample, lambda0, "beta_tilde"),
        diagnostics={
            "estimator": "beta_tilde",
            "delta_used": float(delta),
            "n_evaluated": int(idx.size),
            "sigma_plugin": sigma_hat.tolist(),
            **cfg.bandwidth_diagnostics(n),
        },
    )
    return report


def beta_bar_oracle(
    sample: RandomizedSample,
    cfg: EstimatorConfig,
    ell: RandomizingDensity,
    lambda0,
    payoff,
    score: Callable,
) -> EstimateReport:
    """Kernel sensitivity estimate using a known analytic score function.

    ``score`` maps stacked arrays (lams (M, d), zs (M, n)) to scores (M, d).
    Terms are independent here, so the reported variance is the sample
    variance of the per-draw contributions.
    """
    t0 = time.perf_counter()
    n = sample.n_draws
    if n < 2:
        raise ValueError("beta_bar_oracle needs at least 2 draws")
    d = sample.param_dim
    lambda0 = np.atleast_1d(np.asarray(lambda0, dtype=float))
    h = cfg.h
    w = cfg.kernel_K.evaluate((lambda0[None, :] - sample.lambdas) / h)
    n_used = int(np.count_nonzero(w))
    if n_used == 0:
        raise EstimationError(
            "no draw received outer kernel weight; increase the bandwidth or the sample size"
        )
    phi = payoff.evaluate(sample.zs)
    ell0 = float(ell.evaluate(np.zeros(d)))

    contrib = np.zeros((n, d))
    idx = np.nonzero((w != 0.0) & (phi != 0.0))[0]
    if idx.size:
        s_vals = np.asarray(score(sample.lambdas[idx], sample.zs[idx]), dtype=float)
        contrib[idx] = (phi[idx] * w[idx])[:, None] * s_vals / (ell0 * h**d)
    beta = contrib.mean(axis=0)
    centered = contrib - beta[None, :]
    asym_var = (centered.T @ centered) / (n - 1) / n

    timing = time.perf_counter() - t0
    return EstimateReport(
        beta_hat=beta,
        n_used=n_used,
        truncation_rate=0.0,
        asym_var=asym_var,
        ci_95=np.stack([beta - 1.96 * np.sqrt(np.diag(asym_var)),
                        beta + 1.96 * np.sqrt(np.diag(asym_var))], axis=1),
        timing=timing,
        config_echo=_echo(cfg, sample, lambda0, "beta_bar_oracle"),
        diagnostics={
            "estimator": "beta_bar_oracle",
            "n_evaluated": int(idx.size),
            **cfg.bandwidth_diagnostics(n),
        },
    )


def _echo(cfg: EstimatorConfig, sample: RandomizedSample, lambda0: np.ndarray,
          estimator: str) -> dict:
    return {
        "estimator": estimator,
        "n_draws": sample.n_draws,
        "seed": sample.seed,
        "lambda0": lambda0.tolist(),
        "h": cfg.h,
        "h_inner": cfg.h_inner,
        "delta": cfg.delta,
        "kernel_K": [f.name for f in cfg.kernel_K.factors],
        "kernel_K_order": cfg.kernel_K.order,
        "kernel_H": [f.name for f in cfg.kernel_H.factors],
        "kernel_H_order": cfg.kernel_H.order,
        "binning": {"enabled": cfg.binning.enabled, "cell_size": cfg.binning.cell_size},
    }
