"""Central finite differences with Richardson extrapolation."""

from typing import Callable, Sequence, Tuple, Union

import numpy as np

ArrayLike = Union[float, np.ndarray]

# leading truncation order of each central stencil
_STENCIL_ORDER = {1: 2, 2: 4}


def halving_steps(step: float, levels: int) -> Tuple[float, ...]:
    """Return ``levels + 1`` steps ``step, step/2, step/4, ...``."""
    return tuple(step / 2 ** k for k in range(levels + 1))


def central_difference(func: Callable[[float], ArrayLike], x0: float, h: float, order: int) -> ArrayLike:
    """
    Single central-difference estimate of the ``order``-th derivative.

    Order 1 uses the 3-point stencil (error O(h^2)); order 2 the 5-point
    stencil (error O(h^4)).
    """
    if order == 1:
        return (np.asarray(func(x0 + h)) - np.asarray(func(x0 - h))) / (2.0 * h)
    if order == 2:
        f2p = np.asarray(func(x0 + 2 * h))
        f1p = np.asarray(func(x0 + h))
        f0 = np.asarray(func(x0))
        f1m = np.asarray(func(x0 - h))
        f2m = np.asarray(func(x0 - 2 * h))
        return (-f2p + 16.0 * f1p - 30.0 * f0 + 16.0 * f1m - f2m) / (12.0 * h * h)
    raise ValueError(f"Only derivative orders 1 and 2 are supported, got {order}")


def richardson_table(
    estimate: Callable[[float], ArrayLike],
    steps: Sequence[float],
    leading_order: int,
    order_increment: int = 2,
) -> Tuple[ArrayLike, float]:
    """
    Extrapolate step-dependent estimates to zero step.

    Args:
        estimate: Function returning the estimate at a given step
        steps: Decreasing steps with a constant ratio
        leading_order: Exponent of the leading error term
        order_increment: Exponent gap between successive error terms

    Returns:
        Tuple of (extrapolated value, error estimate). The error estimate is
        the max-norm difference of the last two entries of the final column.
    """
    if len(steps) < 2:
        value = estimate(steps[0])
        return value, float('nan')

    ratio = steps[0] / steps[1]
    column = [np.asarray(estimate(h), dtype=float) for h in steps]
    error = float('nan')
    power = leading_order
    while len(column) > 1:
        factor = ratio ** power
        error = float(np.max(np.abs(column[-1] - column[-2])))
        column = [
            (factor * column[i + 1] - column[i]) / (factor - 1.0)
            for i in range(len(column) - 1)
        ]
        power += order_increment

    value = column[0]
    return (float(value) if value.ndim == 0 else value), error


def derivative(
    func: Callable[[float], ArrayLike],
    x0: float = 0.0,
    steps: Sequence[float] = (1e-3, 5e-4, 2.5e-4),
    order: int = 1,
) -> Tuple[ArrayLike, float]:
    """
    Richardson-extrapolated central derivative of ``func`` at ``x0``.

    Args:
        func: Scalar- or array-valued function of one variable
        x0: Evaluation point
        steps: Halving step sequence
        order: 1 or 2

    Returns:
        Tuple of (derivative, error estimate)
    """
    if order not in _STENCIL_ORDER:
        raise ValueError(f"Only derivative orders 1 and 2 are supported, got {order}")
    return richardson_table(
        lambda h: central_difference(func, x0, h, order),
        steps,
        _STENCIL_ORDER[order],
    )


def gradient(
    func: Callable[[np.ndarray], np.ndarray],
    points: np.ndarray,
    step: float = 1e-5,
    levels: int = 2,
) -> np.ndarray:
    """
    Gradient of a vectorized scalar function at points of shape (..., n).

    ``func`` maps arrays of shape (..., n) to shape (...).
    """
    points = np.asarray(points, dtype=float)
    n = points.shape[-1]
    grad = np.empty(points.shape)
    for i in range(n):
        direction = np.zeros(n)
        direction[i] = 1.0
        grad[..., i], _ = richardson_table(
            lambda h: (func(points + h * direction) - func(points - h * direction)) / (2.0 * h),
            halving_steps(step, levels),
            leading_order=2,
        )
    return grad


def hessian(
    func: Callable[[np.ndarray], np.ndarray],
    points: np.ndarray,
    step: float = 1e-3,
    levels: int = 2,
) -> np.ndarray:
    """
    Hessian of a vectorized scalar function at points of shape (..., n).

    Mixed entries use the 4-point cross stencil, diagonal entries the
    3-point second difference; both are extrapolated in the step.
    """
    points = np.asarray(points, dtype=float)
    n = points.shape[-1]
    hess = np.empty(points.shape + (n,))
    basis = np.eye(n)
    f0 = func(points)
    for i in range(n):
        ei = basis[i]
        hess[..., i, i], _ = richardson_table(
            lambda h: (func(points + h * ei) - 2.0 * f0 + func(points - h * ei)) / (h * h),
            halving_steps(step, levels),
            leading_order=2,
        )
        for j in range(i + 1, n):
            ej = basis[j]
            hess[..., i, j], _ = richardson_table(
                lambda h: (
                    func(points + h * (ei + ej)) - func(points + h * (ei - ej))
                    - func(points - h * (ei - ej)) + func(points - h * (ei + ej))
                ) / (4.0 * h * h),
                halving_steps(step, levels),
                leading_order=2,
            )
            hess[..., j, i] = hess[..., i, j]
    return hess
