"""Small central finite-difference helpers with Richardson extrapolation."""

from __future__ import annotations

from .errors import NumericsError

# Central stencils with O(step^2) truncation error, keyed by derivative order.
_STENCILS = {
    1: ((-1, 1), (-0.5, 0.5)),
    2: ((-1, 0, 1), (1.0, -2.0, 1.0)),
    4: ((-2, -1, 0, 1, 2), (1.0, -4.0, 6.0, -4.0, 1.0)),
}


def central_derivative(f, x: float, order: int, step: float) -> float:
    """Central finite-difference estimate of the order-th derivative at x."""
    if order not in _STENCILS:
        raise NumericsError(f"no central stencil for derivative order {order}")
    offsets, coeffs = _STENCILS[order]
    acc = 0.0
    for o, c in zip(offsets, coeffs):
        acc += c * f(x + o * step)
    return acc / step**order


def richardson_derivative(f, x: float, order: int, step: float) -> float:
    """Richardson-extrapolated central difference (O(step^2) -> O(step^4))."""
    coarse = central_derivative(f, x, order, step)
    fine = central_derivative(f, x, order, 0.5 * step)
    return (4.0 * fine - coarse) / 3.0
