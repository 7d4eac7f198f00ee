"""Small building blocks shared by the encoders."""

from typing import Optional
import math
from .tensor import Tensor, ops


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, /) -> Tensor:
    """Row-wise affine map ``x @ weight + bias`` of a 2-D *x*."""
    out = ops.matmul(x, weight)
    return out if bias is None else ops.add(out, bias)


def attention(x: Tensor, query: Tensor, key: Tensor, value: Tensor, /) -> Tensor:
    """Single-head scaled dot-product self-attention over the rows of *x*.

    No positional information is used, so permuting the rows of *x* permutes the
    output rows the same way.
    """
    return ops.matmul(attention_weights(x, query, key), linear(x, value))


def attention_weights(x: Tensor, query: Tensor, key: Tensor, /) -> Tensor:
    """The row-stochastic matrix `attention` mixes values with."""
    q, k = linear(x, query), linear(x, key)
    logits = ops.mul(ops.matmul(q, ops.transpose(k)), 1.0 / math.sqrt(q.shape[-1]))
    return ops.softmax(logits, axis=-1)


def as_row(vector: Tensor, /) -> Tensor:
    """A 1-D tensor as a one-row matrix."""
    return ops.reshape(vector, (1, -1))


def as_vector(row: Tensor, /) -> Tensor:
    """A one-row matrix as a 1-D tensor."""
    return ops.reshape(row, (-1,))


__all__ = (
    "linear",
    "attention",
    "attention_weights",
    "as_row",
    "as_vector",
)
