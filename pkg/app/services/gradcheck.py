from typing import Callable

import numpy as np

from app.core.errors import NonFiniteError, ShapeError
from app.services.tensor import GradTape, Tensor

ScalarFn = Callable[[Tensor], Tensor]


def _evaluate(f: ScalarFn, point: np.ndarray) -> float:
    value = f(Tensor(point))
    if value.size != 1:
        raise ShapeError(f"grad_check: function must return a scalar, got {value.shape}")
    value = value.item()
    if not np.isfinite(value):
        raise NonFiniteError("grad_check: function is not finite at a perturbed point")
    return value


def analytic_gradient(f: ScalarFn, point: Tensor) -> np.ndarray:
    with GradTape() as tape:
        x = tape.watch(Tensor(point))
        y = f(x)
        (grad,) = tape.gradient(y, [x])
    return grad.numpy()


def central_difference(f: ScalarFn, point: Tensor, step: float) -> np.ndarray:
    base = point.numpy()
    flat = base.ravel()
    numeric = np.empty(flat.size)
    for i in range(flat.size):
        plus, minus = flat.copy(), flat.copy()
        plus[i] += step
        minus[i] -= step
        numeric[i] = (_evaluate(f, plus.reshape(base.shape))
                      - _evaluate(f, minus.reshape(base.shape))) / (2.0 * step)
    return numeric.reshape(base.shape)


def grad_check(f: ScalarFn, point: Tensor, step: float = 1e-5, floor: float = 1e-12) -> float:
    """Max relative error between tape gradient and central differences.

    Per coordinate the error is ``|a - n| / max(floor, |a| + |n|)``. Raising
    ``floor`` above its default makes coordinates whose true derivative is
    zero (a softmax shift, say) compare on an absolute scale instead.
    """
    if step <= 0:
        raise ValueError("grad_check: step must be positive")
    _evaluate(f, point.numpy())
    analytic = analytic_gradient(f, point)
    numeric = central_difference(f, point, step)
    if analytic.size == 0:
        return 0.0
    denom = np.maximum(floor, np.abs(analytic) + np.abs(numeric))
    return float(np.max(np.abs(analytic - numeric) / denom))
