"""Home of `finite_diff_check`."""

from typing import Callable, NamedTuple, Optional, Sequence
import numpy as np
from .core import Tensor, backward


class GradCheckResult(NamedTuple):
    """Outcome of `finite_diff_check`."""

    max_relative_error: float
    analytic: np.ndarray
    numeric: np.ndarray
    coordinates: tuple[tuple[int, ...], ...]


def finite_diff_check(
    f: Callable[[Tensor], Tensor],
    x,
    eps: float = 1e-4,
    /,
    *,
    coordinates: Optional[Sequence[tuple[int, ...]]] = None,
) -> GradCheckResult:
    """Compare the gradient of *f* at *x* against a five-point central difference.

    The relative error per coordinate is ``|a - n| / (|n| + 1e-8)``. Shifted points are
    evaluated with recording on, so *f* may differentiate internally (as the inner
    update does) and sees the same computation at every point. Symmetric differences
    are taken before weighting, so a coordinate *f* ignores gets exactly 0.

    Args:
        f: Function of one tensor returning a scalar tensor.
        x: Point of evaluation (array-like).
        eps: Step size.
        coordinates: Index tuples to check. Defaults to every coordinate of *x*.

    Returns:
        The maximum relative error together with the compared values.
    """
    base = np.array(x, dtype=np.float64)
    point = Tensor(base, requires_grad=True)
    analytic_full = backward(f(point), inputs=[point])[point].data
    if coordinates is None:
        coordinates = list(np.ndindex(base.shape))
    coordinates = tuple(tuple(int(i) for i in c) for c in coordinates)

    def evaluate(index, offset):
        shifted = base.copy()
        shifted[index] += offset
        return f(Tensor(shifted, requires_grad=True)).item()

    analytic, numeric = [], []
    for index in coordinates:
        near = evaluate(index, eps) - evaluate(index, -eps)
        far = evaluate(index, 2 * eps) - evaluate(index, -2 * eps)
        estimate = (8 * near - far) / (12 * eps)
        numeric.append(estimate)
        analytic.append(analytic_full[index])
    analytic, numeric = np.array(analytic), np.array(numeric)
    if len(coordinates) == 0:
        return GradCheckResult(0.0, analytic, numeric, coordinates)
    errors = np.abs(analytic - numeric) / (np.abs(numeric) + 1e-8)
    return GradCheckResult(float(errors.max()), analytic, numeric, coordinates)


__all__ = (
    "GradCheckResult",
    "finite_diff_check",
)
