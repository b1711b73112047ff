"""Compactly supported product kernels: construction, order checks, constants.

Every shipped kernel is a polynomial on a symmetric compact support, so
derivatives are exact and all quadratures below are Gauss-Legendre rules that
integrate the relevant polynomial pieces exactly once the node count is high
enough. A refinement-doubling test still guards the constants so that custom
(non-polynomial) factors are handled honestly.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np
from numpy.polynomial import Polynomial

from .errors import (
    ConfigurationError,
    KernelConstructionError,
    NumericsError,
    OrderVerificationError,
)

__all__ = [
    "UnivariateKernel",
    "ProductKernel",
    "KernelConstants",
    "make_standard_kernel",
    "make_high_order_kernel",
    "verify_order",
    "compute_kernel_constants",
    "univariate_moment",
    "STANDARD_KERNELS",
]

# Moments at or below ZERO_TOL count as vanishing, at or above NONZERO_TOL as
# structural; the gap guards against quadrature noise flipping an order check.
ZERO_TOL = 1e-8
NONZERO_TOL = 1e-6

_MOMENT_NODES = 96


def _gl(a: float, b: float, n: int):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (b - a) * x + 0.5 * (a + b), 0.5 * (b - a) * w


@dataclass(frozen=True, eq=False)
class UnivariateKernel:
    """One kernel factor, vanishing outside [-support_radius, support_radius].

    ``evaluate`` and ``derivative`` are vectorized callables returning exact
    zeros outside the support. Polynomial factors additionally expose their
    raw coefficients (``poly_coef``/``dpoly_coef``), which lets the estimator
    take a compiled fast path; callable-only kernels simply leave them unset.
    """

    support_radius: float
    evaluate: Callable[[np.ndarray], np.ndarray]
    derivative: Callable[[np.ndarray], np.ndarray]
    declared_order: int
    name: str = ""
    poly_coef: np.ndarray | None = None
    dpoly_coef: np.ndarray | None = None


@dataclass(frozen=True, eq=False)
class ProductKernel:
    """Product of univariate factors, one per dimension, of a declared order."""

    dimension: int
    factors: tuple[UnivariateKernel, ...]
    order: int

    def __post_init__(self):
        if self.dimension < 1:
            raise ConfigurationError("kernel dimension must be >= 1")
        if len(self.factors) != self.dimension:
            raise ConfigurationError("one univariate factor is required per dimension")

    @property
    def support_radii(self) -> np.ndarray:
        return np.array([f.support_radius for f in self.factors])

    def evaluate(self, u: np.ndarray) -> np.ndarray:
        """Kernel value at points of shape (..., dimension)."""
        u = np.asarray(u, dtype=float)
        out = self.factors[0].evaluate(u[..., 0])
        for k in range(1, self.dimension):
            out = out * self.factors[k].evaluate(u[..., k])
        return out

    def gradient(self, u: np.ndarray) -> np.ndarray:
        """Gradient at points of shape (..., dimension); shape (..., dimension)."""
        u = np.asarray(u, dtype=float)
        if self.dimension == 1:
            return self.factors[0].derivative(u[..., 0])[..., None]
        vals = [f.evaluate(u[..., k]) for k, f in enumerate(self.factors)]
        ders = [f.derivative(u[..., k]) for k, f in enumerate(self.factors)]
        out = np.empty(u.shape, dtype=float)
        for a in range(self.dimension):
            g = ders[a]
            for k in range(self.dimension):
                if k != a:
                    g = g * vals[k]
            out[..., a] = g
        return out


@dataclass(frozen=True)
class KernelConstants:
    """Kernel-only factors entering the asymptotic variance and bias terms.

    sigma_factor : (d, d) integral of the outer product of the smoothed
        gradient field; symmetric positive semidefinite.
    c3_factor : (d,) convolution-style bias factor (exactly zero for any
        compactly supported product kernel; computed by quadrature anyway).
    h_sq_norm : squared L2 norm of the state-space kernel.
    k_moments / h_moments : nonzero moment tensor entries at the kernels'
        respective orders, keyed by multi-index.
    """

    sigma_factor: np.ndarray
    c3_factor: np.ndarray
    h_sq_norm: float
    k_moments: dict
    h_moments: dict


def _polynomial_factor(poly: Polynomial, radius: float, order: int, name: str) -> UnivariateKernel:
    # raw-coefficient Horner evaluation; this sits on the estimator's hot path
    coef = poly.coef.copy()
    dcoef = poly.deriv().coef.copy()

    def evaluate(u, _c=coef, _r=radius):
        u = np.asarray(u, dtype=float)
        return np.where(np.abs(u) <= _r, np.polynomial.polynomial.polyval(u, _c), 0.0)

    def derivative(u, _c=dcoef, _r=radius):
        u = np.asarray(u, dtype=float)
        return np.where(np.abs(u) <= _r, np.polynomial.polynomial.polyval(u, _c), 0.0)

    return UnivariateKernel(radius, evaluate, derivative, order, name,
                            poly_coef=coef, dpoly_coef=dcoef)


# Classical second-order kernels on [-1, 1].
_STANDARD_POLYS = {
    "epanechnikov": Polynomial([0.75, 0.0, -0.75]),
    "quartic": Polynomial([15 / 16, 0.0, -30 / 16, 0.0, 15 / 16]),
    "triweight": Polynomial([35 / 32, 0.0, -105 / 32, 0.0, 105 / 32, 0.0, -35 / 32]),
}

STANDARD_KERNELS = tuple(_STANDARD_POLYS)


def _standard_factor(name: str, scale: float = 1.0) -> UnivariateKernel:
    try:
        poly = _STANDARD_POLYS[name]
    except KeyError:
        raise ConfigurationError(
            f"unknown kernel {name!r}; choose one of {sorted(_STANDARD_POLYS)}"
        ) from None
    if not scale > 0:
        raise ConfigurationError("kernel scale must be positive")
    if scale != 1.0:
        # K_s(u) = K(u/s)/s keeps the unit integral on [-s, s]
        coeffs = poly.coef / scale ** (1 + np.arange(poly.coef.size))
        return _polynomial_factor(Polynomial(coeffs), scale, 2, f"{name}*{scale:g}")
    return _polynomial_factor(poly, 1.0, 2, name)


def make_standard_kernel(name: str, dimension: int, scale: float = 1.0) -> ProductKernel:
    """Product of identical classical even kernels; order 2.

    ``scale`` stretches the support to [-scale, scale] while keeping the unit
    integral; use it to match a coordinate whose spread differs from O(1)
    (the bandwidth multiplies the scaled support).
    """
    if dimension < 1:
        raise ConfigurationError("dimension must be >= 1")
    factor = _standard_factor(name, scale)
    return ProductKernel(dimension, (factor,) * dimension, 2)


def univariate_moment(factor: UnivariateKernel, degree: int, nodes: int = _MOMENT_NODES) -> float:
    """``integral of u^degree * k(u)`` over the factor's support, by quadrature."""
    x, w = _gl(-factor.support_radius, factor.support_radius, nodes)
    return float(w @ (x**degree * factor.evaluate(x)))


def make_high_order_kernel(base: UnivariateKernel, order: int, dimension: int) -> ProductKernel:
    """Polynomial-modified version of an even base kernel with higher order.

    Multiplies the base by an even polynomial whose coefficients are solved so
    that all moments of degree 1..order-1 vanish while the integral stays 1.
    """
    if order not in (2, 4, 6):
        raise ConfigurationError("supported kernel orders are 2, 4 and 6")
    if dimension < 1:
        raise ConfigurationError("dimension must be >= 1")
    if abs(univariate_moment(base, 1)) > ZERO_TOL:
        raise ConfigurationError("high-order construction requires an even base kernel")

    half = order // 2
    moments = [univariate_moment(base, 2 * k) for k in range(2 * half)]
    system = np.array([[moments[i + j] for j in range(half)] for i in range(half)])
    rhs = np.zeros(half)
    rhs[0] = 1.0
    try:
        coeffs = np.linalg.solve(system, rhs)
    except np.linalg.LinAlgError as exc:
        raise KernelConstructionError(f"moment system is singular: {exc}") from exc
    if not np.all(np.isfinite(coeffs)):
        raise KernelConstructionError("moment system produced non-finite coefficients")

    even_coeffs = np.zeros(2 * half - 1)
    even_coeffs[::2] = coeffs
    name = f"{base.name or 'base'}-order{order}"

    if base.poly_coef is not None:
        product = np.polynomial.polynomial.polymul(even_coeffs, base.poly_coef)
        factor = _polynomial_factor(Polynomial(product), base.support_radius, order, name)
    else:
        mod = Polynomial(even_coeffs)
        dmod = mod.deriv()
        b_eval, b_der = base.evaluate, base.derivative

        def evaluate(u, _m=mod):
            return _m(np.asarray(u, dtype=float)) * b_eval(u)

        def derivative(u, _m=mod, _dm=dmod):
            u = np.asarray(u, dtype=float)
            return _dm(u) * b_eval(u) + _m(u) * b_der(u)

        factor = UnivariateKernel(base.support_radius, evaluate, derivative, order, name)
    return ProductKernel(dimension, (factor,) * dimension, order)


def _compositions(total: int, parts: int):
    """All tuples of nonnegative ints of length ``parts`` summing to ``total``."""
    if parts == 1:
        yield (total,)
        return
    for head in range(total + 1):
        for tail in _compositions(total - head, parts - 1):
            yield (head,) + tail


def _mixed_moments(kernel: ProductKernel, degree: int) -> dict:
    table = {}
    uni = [
        [univariate_moment(f, r) for r in range(degree + 1)] for f in kernel.factors
    ]
    for alpha in _compositions(degree, kernel.dimension):
        v = 1.0
        for k, a in enumerate(alpha):
            v *= uni[k][a]
        table[alpha] = v
    return table


def verify_order(kernel: ProductKernel, max_order: int) -> int:
    """Smallest degree at which some mixed moment is structurally nonzero.

    Lower-degree moments must all vanish below ZERO_TOL; a moment landing in
    the gap between ZERO_TOL and NONZERO_TOL is ambiguous and rejected.
    """
    if max_order > 8:
        raise ConfigurationError("order verification supports degrees up to 8")
    for degree in range(1, max_order + 1):
        worst = max(abs(v) for v in _mixed_moments(kernel, degree).values())
        if worst > NONZERO_TOL:
            return degree
        if worst > ZERO_TOL:
            raise OrderVerificationError(
                f"degree-{degree} moment {worst:.3e} is in the ambiguous band "
                f"({ZERO_TOL:g}, {NONZERO_TOL:g}); refusing to classify"
            )
    raise OrderVerificationError(
        f"no nonzero moment up to degree {max_order}; kernel order exceeds max_order"
    )


def _factor_functionals(factor: UnivariateKernel, rtol: float = 1e-6, max_refine: int = 4) -> dict:
    """Quadrature of the self-convolution functionals of one factor.

    With C = conv(k, k) and D = conv(k, k'), returns the integrals of C^2,
    D^2, C*D, the double integral of k(t-s)k(s)k'(s), and the squared L2 norm
    of k. Inner integrals run over the exact overlap interval (where the
    integrand is smooth) and the outer integral is split at 0 where the
    convolution has a kink; node counts double until results stabilize.
    """
    R = factor.support_radius
    prev = None
    n = 32
    for _ in range(max_refine + 1):
        # inner nodes per outer node, mapped to the overlap [t-R, R] etc.
        t_parts = []
        w_parts = []
        for a, b in ((-2 * R, 0.0), (0.0, 2 * R)):
            tp, wp = _gl(a, b, n)
            t_parts.append(tp)
            w_parts.append(wp)
        t = np.concatenate(t_parts)
        wt = np.concatenate(w_parts)

        lo = np.maximum(-R, t - R)
        hi = np.minimum(R, t + R)
        xg, wg = np.polynomial.legendre.leggauss(n)
        s = 0.5 * (hi - lo)[:, None] * xg[None, :] + 0.5 * (hi + lo)[:, None]
        ws = 0.5 * (hi - lo)[:, None] * wg[None, :]

        ks = factor.evaluate(s)
        kds = factor.derivative(s)
        kts = factor.evaluate(t[:, None] - s)
        conv = np.sum(kts * ks * ws, axis=1)
        dconv = np.sum(kts * kds * ws, axis=1)
        triple = np.sum(kts * ks * kds * ws, axis=1)

        xs, wxs = _gl(-R, R, n)
        cur = {
            "icc": float(wt @ conv**2),
            "idd": float(wt @ dconv**2),
            "icd": float(wt @ (conv * dconv)),
            "triple": float(wt @ triple),
            "sq_norm": float(wxs @ factor.evaluate(xs) ** 2),
        }
        if prev is not None:
            stable = all(
                abs(cur[k] - prev[k]) <= rtol * max(1.0, abs(cur[k]), abs(prev[k]))
                for k in cur
            )
            if stable:
                return cur
        prev = cur
        n *= 2
    raise NumericsError("kernel constants did not stabilize under refinement doubling")


@lru_cache(maxsize=64)
def _cached_functionals(factor: UnivariateKernel) -> dict:
    return _factor_functionals(factor)


def compute_kernel_constants(kernel_k: ProductKernel, kernel_h: ProductKernel) -> KernelConstants:
    """All kernel-only constants used by variance estimates and bandwidth rules."""
    d = kernel_k.dimension
    fk = [_cached_functionals(f) for f in kernel_k.factors]
    fh = [_cached_functionals(f) for f in kernel_h.factors]

    sigma = np.empty((d, d))
    for a in range(d):
        for b in range(d):
            v = 1.0
            if a == b:
                v *= fk[a]["idd"]
            else:
                v *= fk[a]["icd"] * fk[b]["icd"]
            for j in range(d):
                if j != a and j != b:
                    v *= fk[j]["icc"]
            sigma[a, b] = v

    c3 = np.empty(d)
    for a in range(d):
        v = fk[a]["triple"]
        for j in range(d):
            if j != a:
                v *= fk[j]["sq_norm"]
        c3[a] = v

    h_sq_norm = 1.0
    for f in fh:
        h_sq_norm *= f["sq_norm"]

    return KernelConstants(
        sigma_factor=sigma,
        c3_factor=c3,
        h_sq_norm=float(h_sq_norm),
        k_moments={
            a: v for a, v in _mixed_moments(kernel_k, kernel_k.order).items() if abs(v) > ZERO_TOL
        },
        h_moments={
            a: v for a, v in _mixed_moments(kernel_h, kernel_h.order).items() if abs(v) > ZERO_TOL
        },
    )
