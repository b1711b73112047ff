"""Parameterized simulators and payoffs.

Two model families ship here: a closed-form Black-Scholes terminal value with
analytic density, score, tangent process and true sensitivities (the
verification oracle), and a general Euler-discretized diffusion whose density
is unknown but which can be simulated under any coefficients.

Pricing convention
------------------
Values are plain expectations of the payoff: no discounting is applied by any
estimator. The shipped ``put`` and ``truncated_call`` payoffs are expressed in
units of the riskless asset (the payoff itself carries the exp(-r*T) factor),
which reproduces the familiar discounted Black-Scholes prices and deltas. The
``digital`` payoff is the raw indicator, so its value is an exercise
probability. Practitioners expecting a separate discount step should read
payoff definitions first.

Smoothness notes
----------------
The lognormal density of BlackScholesModel is smooth to every order in both
the parameter and the state, so every smoothness requirement of the kernel
theory holds analytically. Euler models expose no density; their regularity
is an assumption on the coefficients (uniform ellipticity plus smooth drift
and diffusion), checked only through the optional ellipticity bound.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import integrate
from scipy.stats import norm

from .errors import ConfigurationError, DomainError, SimulationError
from .numdiff import richardson_derivative

__all__ = [
    "BlackScholesModel",
    "EulerDiffusionModel",
    "Payoff",
    "put_payoff",
    "smoothed_put_payoff",
    "digital_payoff",
    "truncated_call_payoff",
    "identity_payoff",
    "bs_true_value",
    "bs_true_greek",
    "bs_score",
    "euler_simulate",
    "euler_gbm_model",
]


@dataclass(frozen=True, eq=False)
class BlackScholesModel:
    """Lognormal terminal value parameterized by the spot (d = n = 1).

    ``Z(lambda) = lambda * exp((r - sigma^2/2) T + sigma sqrt(T) G)`` with G
    standard normal.
    """

    r: float
    sigma: float
    T: float
    parameterization: str = "spot"

    param_dim = 1
    state_dim = 1
    has_density = True
    has_score = True
    has_true_greek = True
    has_tangent = True

    def __post_init__(self):
        if self.parameterization != "spot":
            raise ConfigurationError("only the spot parameterization is supported")
        if self.sigma <= 0 or self.T <= 0:
            raise ConfigurationError("sigma and T must be positive")

    @property
    def _drift(self) -> float:
        return (self.r - 0.5 * self.sigma**2) * self.T

    @property
    def _vol(self) -> float:
        return self.sigma * math.sqrt(self.T)

    def simulate(self, lam, rng: np.random.Generator) -> np.ndarray:
        lam = np.atleast_1d(np.asarray(lam, dtype=float))
        g = rng.standard_normal()
        return lam * np.exp(self._drift + self._vol * g)

    def simulate_batch(self, lams: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        lams = np.asarray(lams, dtype=float)
        g = rng.standard_normal(lams.shape[0])
        return lams * np.exp(self._drift + self._vol * g)[:, None]

    def density(self, lam, z) -> np.ndarray:
        """Lognormal density in z for spot lam (vectorized in either argument)."""
        lam = np.asarray(lam, dtype=float)
        z = np.asarray(z, dtype=float)
        out = np.zeros(np.broadcast(lam, z).shape)
        pos = (z > 0) & (lam > 0)
        zl = np.broadcast_to(z, out.shape)[pos]
        ll = np.broadcast_to(lam, out.shape)[pos]
        arg = (np.log(zl / ll) - self._drift) / self._vol
        out[pos] = np.exp(-0.5 * arg**2) / (zl * self._vol * math.sqrt(2.0 * math.pi))
        return out if out.ndim else float(out)

    def score(self, lam, z) -> np.ndarray:
        """d/d lambda of log density: (ln(z/lam) - (r - sigma^2/2) T) / (lam sigma^2 T)."""
        lam = np.asarray(lam, dtype=float)
        z = np.asarray(z, dtype=float)
        if np.any(z <= 0):
            raise DomainError("score requires z > 0")
        if np.any(lam <= 0):
            raise DomainError("score requires lambda > 0")
        return (np.log(z / lam) - self._drift) / (lam * self.sigma**2 * self.T)

    def score_vector(self, lams: np.ndarray, zs: np.ndarray) -> np.ndarray:
        """Score for stacked (N, 1) parameter and state arrays; shape (N, 1)."""
        return self.score(lams[:, 0], zs[:, 0])[:, None]

    def tangent(self, lams: np.ndarray, zs: np.ndarray) -> np.ndarray:
        """Pathwise derivative dZ/dlambda = Z / lambda; shape (N, n, d)."""
        return (zs[:, 0] / np.asarray(lams)[:, 0])[:, None, None]

    def admissible(self, lams: np.ndarray) -> bool:
        return bool(np.all(np.asarray(lams) > 0))

    def z_scale(self, lam: float) -> float:
        """Characteristic width of the terminal distribution at spot lam."""
        return float(lam) * self._vol


@dataclass(frozen=True, eq=False)
class EulerDiffusionModel:
    """Explicit Euler-Maruyama discretization of a parameterized diffusion.

    All coefficient callables are vectorized over a batch of paths:
    ``x0(lams) -> (B, n)``, ``mu(t, lams, x) -> (B, n)`` and
    ``sigma_fn(t, lams, x) -> (B, n, m)`` with ``lams`` of shape (B, d).
    When ``ellipticity_c`` is set, sampled eigenvalue bounds of sigma sigma^T
    are checked at visited grid points and a violation aborts the simulation.
    """

    x0: Callable
    mu: Callable
    sigma_fn: Callable
    T: float
    steps: int
    param_dim: int
    state_dim: int
    wiener_dim: int
    ellipticity_c: float | None = None

    has_density = False
    has_score = False
    has_true_greek = False
    has_tangent = False

    # paths whose diffusion matrix gets an eigenvalue check at each step
    _ELLIPTICITY_SAMPLE = 8

    def __post_init__(self):
        if self.steps < 1:
            raise ConfigurationError("steps must be >= 1")
        if self.ellipticity_c is not None and not self.ellipticity_c > 1.0:
            raise ConfigurationError("ellipticity constant must exceed 1")

    def simulate(self, lam, rng: np.random.Generator) -> np.ndarray:
        lam = np.atleast_1d(np.asarray(lam, dtype=float))
        return self.simulate_batch(lam[None, :], rng)[0]

    def simulate_batch(self, lams: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        lams = np.asarray(lams, dtype=float)
        x = np.asarray(self.x0(lams), dtype=float)
        dt = self.T / self.steps
        sqdt = math.sqrt(dt)
        for k in range(self.steps):
            t = k * dt
            vol = np.asarray(self.sigma_fn(t, lams, x), dtype=float)
            if self.ellipticity_c is not None:
                self._check_ellipticity(vol, k)
            g = rng.standard_normal((x.shape[0], self.wiener_dim))
            x = x + np.asarray(self.mu(t, lams, x), dtype=float) * dt
            x = x + np.einsum("bnm,bm->bn", vol, g) * sqdt
            if not np.all(np.isfinite(x)):
                raise SimulationError(f"non-finite state at step {k + 1}", step=k + 1)
        return x

    def _check_ellipticity(self, vol: np.ndarray, step: int) -> None:
        c = self.ellipticity_c
        sample = vol[: self._ELLIPTICITY_SAMPLE]
        gram = np.einsum("bnm,bkm->bnk", sample, sample)
        eigs = np.linalg.eigvalsh(gram)
        if eigs.min() < 1.0 / c or eigs.max() > c:
            raise SimulationError(
                f"ellipticity bounds [{1.0 / c:.6g}, {c:.6g}] violated at step {step} "
                f"(eigenvalues in [{eigs.min():.6g}, {eigs.max():.6g}])",
                step=step,
            )


def euler_simulate(model: EulerDiffusionModel, lam, rng: np.random.Generator) -> np.ndarray:
    """Terminal state of one Euler path; see EulerDiffusionModel.simulate."""
    return model.simulate(lam, rng)


def euler_gbm_model(r: float, sigma: float, T: float, steps: int) -> EulerDiffusionModel:
    """Geometric Brownian motion under the Euler scheme (d = n = m = 1)."""
    return EulerDiffusionModel(
        x0=lambda lams: np.asarray(lams, dtype=float).copy(),
        mu=lambda t, lams, x: r * x,
        sigma_fn=lambda t, lams, x: (sigma * x)[:, :, None],
        T=T,
        steps=steps,
        param_dim=1,
        state_dim=1,
        wiener_dim=1,
    )


@dataclass(frozen=True, eq=False)
class Payoff:
    """Payoff function with a declared support box.

    ``evaluate`` maps state arrays of shape (..., n) to values of shape (...);
    it is zero outside ``support_box`` (an (n, 2) array, infinite bounds
    allowed for documented stress payoffs). ``floor_box`` is the compact
    region used when recording the sampling-density floor; it may be a strict
    subset of the support.
    """

    evaluate: Callable
    support_box: np.ndarray
    continuous: bool
    derivative: Callable | None = None
    name: str = ""
    floor_box: np.ndarray | None = None


def _discount(model) -> float:
    if model is None:
        return 1.0
    return math.exp(-model.r * model.T)


def put_payoff(strike: float, model: BlackScholesModel | None = None,
               z_min_frac: float = 1e-3) -> Payoff:
    """Put payoff (strike - z)+ in units of the riskless asset.

    Continuous with compact support [0, strike]. ``floor_box`` starts at
    ``z_min_frac * strike`` so the density-floor bookkeeping stays away from
    the z = 0 boundary where any lognormal density vanishes.
    """
    if strike <= 0:
        raise ConfigurationError("strike must be positive")
    factor = _discount(model)

    def evaluate(z):
        z = np.asarray(z, dtype=float)
        return factor * np.maximum(strike - z[..., 0], 0.0)

    def derivative(z):
        z = np.asarray(z, dtype=float)
        inside = (z[..., 0] > 0.0) & (z[..., 0] < strike)
        return np.where(inside, -factor, 0.0)[..., None]

    return Payoff(
        evaluate=evaluate,
        support_box=np.array([[0.0, strike]]),
        continuous=True,
        derivative=derivative,
        name="put",
        floor_box=np.array([[z_min_frac * strike, strike]]),
    )


def smoothed_put_payoff(strike: float, lower: tuple[float, float],
                        model: BlackScholesModel | None = None) -> Payoff:
    """Put payoff with a smooth knockout below ``lower = (a, b)``.

    A cubic smoothstep ramps the payoff from zero at ``a`` to full size at
    ``b``, so the payoff is continuously differentiable with compact support
    [a, strike] on which any reasonable terminal density stays bounded away
    from zero. This is the payoff of choice when an experiment needs the
    density-floor assumption to genuinely hold.
    """
    a, b = float(lower[0]), float(lower[1])
    if not 0 <= a < b < strike:
        raise ConfigurationError("need 0 <= a < b < strike for the knockout ramp")
    factor = _discount(model)

    def _ramp(z):
        t = np.clip((z - a) / (b - a), 0.0, 1.0)
        return t * t * (3.0 - 2.0 * t)

    def _dramp(z):
        t = np.clip((z - a) / (b - a), 0.0, 1.0)
        return 6.0 * t * (1.0 - t) / (b - a)

    def evaluate(z):
        z = np.asarray(z, dtype=float)
        zz = z[..., 0]
        return factor * np.maximum(strike - zz, 0.0) * _ramp(zz)

    def derivative(z):
        z = np.asarray(z, dtype=float)
        zz = z[..., 0]
        inside = (zz > a) & (zz < strike)
        val = factor * (np.maximum(strike - zz, 0.0) * _dramp(zz) - _ramp(zz))
        return np.where(inside, val, 0.0)[..., None]

    return Payoff(
        evaluate=evaluate,
        support_box=np.array([[a, strike]]),
        continuous=True,
        derivative=derivative,
        name="smoothed_put",
        floor_box=np.array([[a, strike]]),
    )


def digital_payoff(strike: float, upper: float = np.inf) -> Payoff:
    """Indicator payoff 1{z > strike}; a documented discontinuous stress case.

    Undiscounted, so its value is an exercise probability. The support box is
    unbounded above unless ``upper`` truncates it.
    """
    if strike <= 0:
        raise ConfigurationError("strike must be positive")

    def evaluate(z):
        z = np.asarray(z, dtype=float)
        zz = z[..., 0]
        return np.where((zz > strike) & (zz <= upper), 1.0, 0.0)

    return Payoff(
        evaluate=evaluate,
        support_box=np.array([[strike, upper]]),
        continuous=False,
        derivative=None,
        name="digital",
    )


def truncated_call_payoff(strike: float, barrier: float,
                          model: BlackScholesModel | None = None) -> Payoff:
    """Call payoff (z - strike)+ killed above a barrier, in riskless-asset units.

    The barrier truncation restores compact support at the price of a jump at
    the barrier, so this is a stress payoff like the digital.
    """
    if not 0 < strike < barrier:
        raise ConfigurationError("need 0 < strike < barrier")
    factor = _discount(model)

    def evaluate(z):
        z = np.asarray(z, dtype=float)
        zz = z[..., 0]
        return factor * np.where(zz <= barrier, np.maximum(zz - strike, 0.0), 0.0)

    def derivative(z):
        z = np.asarray(z, dtype=float)
        inside = (z[..., 0] > strike) & (z[..., 0] < barrier)
        return np.where(inside, factor, 0.0)[..., None]

    return Payoff(
        evaluate=evaluate,
        support_box=np.array([[strike, barrier]]),
        continuous=False,
        derivative=derivative,
        name="truncated_call",
    )


def identity_payoff(box: float = np.inf) -> Payoff:
    """Linear test payoff z (unbounded; test use only)."""

    def evaluate(z):
        z = np.asarray(z, dtype=float)
        return z[..., 0].copy() if hasattr(z[..., 0], "copy") else z[..., 0]

    def derivative(z):
        z = np.asarray(z, dtype=float)
        return np.ones_like(z[..., 0])[..., None]

    return Payoff(
        evaluate=evaluate,
        support_box=np.array([[-box, box]]),
        continuous=True,
        derivative=derivative,
        name="identity",
    )


_PAYOFF_KINDS = ("put", "truncated_call", "digital")


def _d1_d2(model: BlackScholesModel, strike: float, lam: float):
    d1 = (math.log(lam / strike) + (model.r + 0.5 * model.sigma**2) * model.T) / (
        model.sigma * math.sqrt(model.T)
    )
    return d1, d1 - model.sigma * math.sqrt(model.T)


def bs_true_value(model: BlackScholesModel, payoff: str, strike: float, lam: float,
                  barrier: float | None = None) -> float:
    """Closed-form or quadrature value of the named payoff at spot ``lam``.

    The put uses the Black-Scholes formula (payoff in riskless-asset units);
    digital and truncated_call integrate against the lognormal density.
    """
    if strike <= 0 or lam <= 0:
        raise ValueError("strike and lambda must be positive")
    if payoff == "put":
        d1, d2 = _d1_d2(model, strike, lam)
        return float(
            strike * math.exp(-model.r * model.T) * norm.cdf(-d2) - lam * norm.cdf(-d1)
        )
    if payoff == "digital":
        upper = np.inf if barrier is None else barrier
        val, _ = integrate.quad(
            lambda z: model.density(lam, z), strike, upper, limit=200
        )
        return float(val)
    if payoff == "truncated_call":
        if barrier is None:
            raise ConfigurationError("truncated_call needs a barrier")
        factor = math.exp(-model.r * model.T)
        val, _ = integrate.quad(
            lambda z: factor * (z - strike) * model.density(lam, z),
            strike,
            barrier,
            limit=200,
        )
        return float(val)
    raise ConfigurationError(f"unknown payoff {payoff!r}; choose one of {_PAYOFF_KINDS}")


def bs_true_greek(model: BlackScholesModel, payoff: str, strike: float, lam: float,
                  barrier: float | None = None) -> float:
    """Spot sensitivity dV/dlambda of the named payoff.

    Closed form for the put (Phi(d1) - 1); Richardson-extrapolated central
    differences of the value oracle otherwise.
    """
    if payoff == "put":
        d1, _ = _d1_d2(model, strike, lam)
        return float(norm.cdf(d1) - 1.0)
    step = 1e-5 * lam
    return richardson_derivative(
        lambda x: bs_true_value(model, payoff, strike, x, barrier=barrier), lam, 1, step
    )


def bs_score(model: BlackScholesModel, lam: float, z: float) -> float:
    """Analytic score of the lognormal terminal value; DomainError for z <= 0."""
    return float(model.score(lam, z))
