"""Home of `AdamState` and `adam_step`."""

from typing import Mapping
from dataclasses import dataclass, field
import numpy as np
from .core import Tensor
from ..errors import NumericalError


@dataclass
class AdamState:
    """Moment estimates and step counter of the Adam optimizer."""

    first_moment: dict[str, np.ndarray] = field(default_factory=dict)
    """Exponential average of gradients, by parameter name."""
    second_moment: dict[str, np.ndarray] = field(default_factory=dict)
    """Exponential average of squared gradients, by parameter name."""
    step: int = 0
    """Number of updates applied so far."""
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: Mapping[str, Tensor], /, **kwargs) -> "AdamState":
        """Zero-initialized state for *params*."""
        return cls(
            first_moment={k: np.zeros_like(p.data) for k, p in params.items()},
            second_moment={k: np.zeros_like(p.data) for k, p in params.items()},
            **kwargs,
        )


def adam_step(
    params: Mapping[str, Tensor],
    grads: Mapping[str, Tensor],
    state: AdamState,
    lr: float,
    /,
):
    """Apply one Adam update to *params* in place.

    Parameters without an entry in *grads* are left untouched and keep their moments.

    Args:
        params: Parameters by name.
        grads: Gradients by name, each with the shape of its parameter.
        state: Optimizer state, updated in place.
        lr: Learning rate.

    Raises:
        ValueError: If a gradient's shape differs from its parameter's.
        NumericalError: If a gradient is not finite.
    """
    for name, g in grads.items():
        p = params[name]
        if g.shape != p.shape:
            raise ValueError(
                f"gradient shape {g.shape} does not match parameter {name!r} {p.shape}"
            )
        if not np.isfinite(g.data).all():
            raise NumericalError(f"non-finite gradient for {name!r}", op="adam_step")
    state.step += 1
    t = state.step
    for name, g in grads.items():
        p = params[name]
        m = state.first_moment.setdefault(name, np.zeros_like(p.data))
        v = state.second_moment.setdefault(name, np.zeros_like(p.data))
        m *= state.beta1
        m += (1 - state.beta1) * g.data
        v *= state.beta2
        v += (1 - state.beta2) * g.data * g.data
        m_hat = m / (1 - state.beta1**t)
        v_hat = v / (1 - state.beta2**t)
        p.data -= lr * m_hat / (np.sqrt(v_hat) + state.eps)


__all__ = (
    "AdamState",
    "adam_step",
)
