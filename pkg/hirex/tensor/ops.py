"""Tensor operations.

The op set is closed and minimal: `matmul`, `add`, `concat`, slicing (`index`,
`take_rows`), row means (`mean`), `softmax`, `l2_norm`, `cosine_similarity`, the
elementwise `mul`, `relu` (max with 0) and `tanh`, `layer_norm` and `dropout_mask`.
The remaining primitives (`sub`, `neg`, `reciprocal`, `exp`, `log`, `sqrt`, `sum`,
`reshape`, `transpose` and the broadcasting helpers) exist so that the ones above and
every backward function can be written with tensor operations, which keeps gradients
differentiable.

All arithmetic broadcasts like numpy.
"""

from typing import Optional, Sequence
import numpy as np
from .core import Tensor
from ..errors import NumericalError


def as_tensor(value, /) -> Tensor:
    """Return *value* if it is a `Tensor`, otherwise wrap it as a constant."""
    return value if isinstance(value, Tensor) else Tensor(value)


def _normalize_axes(axis, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def _keepdims_shape(shape: tuple[int, ...], axis) -> tuple[int, ...]:
    axes = _normalize_axes(axis, len(shape))
    return tuple(1 if i in axes else n for i, n in enumerate(shape))


def _sum_to_array(array: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if array.shape == shape:
        return array
    lead = array.ndim - len(shape)
    axes = tuple(range(lead)) + tuple(
        i + lead
        for i, n in enumerate(shape)
        if n == 1 and array.shape[i + lead] != 1
    )
    return array.sum(axis=axes, keepdims=True).reshape(shape)


# Broadcasting


def sum_to(x, shape: Sequence[int], /) -> Tensor:
    """Sum *x* down to *shape*, undoing numpy broadcasting."""
    x, shape = as_tensor(x), tuple(shape)
    if x.shape == shape:
        return x

    def backward(g):
        return (broadcast_to(g, x.shape),)

    return Tensor.from_op(_sum_to_array(x.data, shape), "sum_to", (x,), backward)


def broadcast_to(x, shape: Sequence[int], /) -> Tensor:
    """Broadcast *x* to *shape*."""
    x, shape = as_tensor(x), tuple(shape)
    if x.shape == shape:
        return x

    def backward(g):
        return (sum_to(g, x.shape),)

    data = np.broadcast_to(x.data, shape).copy()
    return Tensor.from_op(data, "broadcast_to", (x,), backward)


# Elementwise arithmetic


def add(a, b, /) -> Tensor:
    """Elementwise sum."""
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        return (
            sum_to(g, a.shape) if a.requires_grad else None,
            sum_to(g, b.shape) if b.requires_grad else None,
        )

    return Tensor.from_op(a.data + b.data, "add", (a, b), backward)


def sub(a, b, /) -> Tensor:
    """Elementwise difference."""
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        return (
            sum_to(g, a.shape) if a.requires_grad else None,
            sum_to(neg(g), b.shape) if b.requires_grad else None,
        )

    return Tensor.from_op(a.data - b.data, "sub", (a, b), backward)


def mul(a, b, /) -> Tensor:
    """Elementwise product."""
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        return (
            sum_to(mul(g, b), a.shape) if a.requires_grad else None,
            sum_to(mul(g, a), b.shape) if b.requires_grad else None,
        )

    return Tensor.from_op(a.data * b.data, "mul", (a, b), backward)


def neg(x, /) -> Tensor:
    """Elementwise negation."""
    x = as_tensor(x)
    return Tensor.from_op(-x.data, "neg", (x,), lambda g: (neg(g),))


def reciprocal(x, /) -> Tensor:
    """Elementwise 1 / x."""
    x = as_tensor(x)

    def backward(g):
        return (neg(mul(g, mul(out, out))),)

    with np.errstate(divide="ignore"):
        data = 1.0 / x.data
    out = Tensor.from_op(data, "reciprocal", (x,), backward)
    return out


def div(a, b, /) -> Tensor:
    """Elementwise quotient."""
    return mul(a, reciprocal(b))


def exp(x, /) -> Tensor:
    """Elementwise exponential."""
    x = as_tensor(x)

    def backward(g):
        return (mul(g, out),)

    with np.errstate(over="ignore"):
        data = np.exp(x.data)
    out = Tensor.from_op(data, "exp", (x,), backward)
    return out


def log(x, /) -> Tensor:
    """Elementwise natural logarithm."""
    x = as_tensor(x)
    with np.errstate(divide="ignore", invalid="ignore"):
        data = np.log(x.data)
    return Tensor.from_op(data, "log", (x,), lambda g: (div(g, x),))


def sqrt(x, /) -> Tensor:
    """Elementwise square root."""
    x = as_tensor(x)

    def backward(g):
        return (mul(g, mul(0.5, reciprocal(out))),)

    with np.errstate(invalid="ignore"):
        data = np.sqrt(x.data)
    out = Tensor.from_op(data, "sqrt", (x,), backward)
    return out


def tanh(x, /) -> Tensor:
    """Elementwise hyperbolic tangent."""
    x = as_tensor(x)

    def backward(g):
        return (mul(g, sub(1.0, mul(out, out))),)

    out = Tensor.from_op(np.tanh(x.data), "tanh", (x,), backward)
    return out


def relu(x, /) -> Tensor:
    """Elementwise max(x, 0)."""
    x = as_tensor(x)
    mask = Tensor((x.data > 0).astype(np.float64))
    return Tensor.from_op(mask.data * x.data, "relu", (x,), lambda g: (mul(g, mask),))


# Shapes and reductions


def reshape(x, shape: Sequence[int], /) -> Tensor:
    """Reshape *x*."""
    x = as_tensor(x)
    data = x.data.reshape(tuple(shape)).copy()
    return Tensor.from_op(data, "reshape", (x,), lambda g: (reshape(g, x.shape),))


def transpose(x, /) -> Tensor:
    """Transpose a 2-D tensor."""
    x = as_tensor(x)
    if x.ndim != 2:
        raise ValueError(f"transpose expects a 2-D tensor, got shape {x.shape}")
    data = np.ascontiguousarray(x.data.T)
    return Tensor.from_op(data, "transpose", (x,), lambda g: (transpose(g),))


def sum(x, /, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    """Sum over *axis* (all axes by default)."""
    x = as_tensor(x)

    def backward(g):
        kept = reshape(g, _keepdims_shape(x.shape, axis))
        return (broadcast_to(kept, x.shape),)

    data = np.sum(x.data, axis=axis, keepdims=keepdims)
    return Tensor.from_op(data, "sum", (x,), backward)


def mean(x, /, axis=None, keepdims: bool = False) -> Tensor:
    """Mean over *axis* (all axes by default). ``mean(x, axis=0)`` is the row mean."""
    x = as_tensor(x)
    count = 1
    for a in _normalize_axes(axis, x.ndim):
        count *= x.shape[a]
    if count == 0:
        raise ValueError(f"mean over an empty axis of shape {x.shape}")
    return mul(sum(x, axis=axis, keepdims=keepdims), 1.0 / count)


def matmul(a, b, /) -> Tensor:
    """Matrix product of two 2-D tensors."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")

    def backward(g):
        return (
            matmul(g, transpose(b)) if a.requires_grad else None,
            matmul(transpose(a), g) if b.requires_grad else None,
        )

    return Tensor.from_op(a.data @ b.data, "matmul", (a, b), backward)


# Indexing and joining


def _normalize_key(key):
    if isinstance(key, list):
        return np.asarray(key, dtype=np.intp)
    if isinstance(key, tuple):
        return tuple(_normalize_key(k) for k in key)
    return key


def index(x, key, /) -> Tensor:
    """Basic or integer-array indexing, like ``x.data[key]``."""
    x = as_tensor(x)
    key = _normalize_key(key)
    data = np.array(x.data[key])
    return Tensor.from_op(data, "index", (x,), lambda g: (index_add(g, key, x.shape),))


def index_add(g, key, shape: Sequence[int], /) -> Tensor:
    """Scatter *g* into zeros of *shape* at *key*, accumulating repeated indices."""
    g, shape = as_tensor(g), tuple(shape)
    data = np.zeros(shape)
    np.add.at(data, key, g.data)
    return Tensor.from_op(data, "index_add", (g,), lambda h: (index(h, key),))


def take_rows(table, ids, /) -> Tensor:
    """Gather rows of a 2-D *table* by integer *ids* (embedding lookup)."""
    ids = np.asarray(ids, dtype=np.intp)
    if ids.ndim != 1:
        raise ValueError(f"take_rows expects 1-D ids, got shape {ids.shape}")
    return index(table, ids)


def concat(tensors: Sequence, /, axis: int = 0) -> Tensor:
    """Concatenate tensors along *axis*."""
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ValueError("concat of an empty sequence")
    ndim = tensors[0].ndim
    axis = axis % ndim
    data = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def backward(g):
        pieces = []
        for t, start, stop in zip(tensors, bounds[:-1], bounds[1:]):
            if not t.requires_grad:
                pieces.append(None)
                continue
            key = (slice(None),) * axis + (slice(int(start), int(stop)),)
            pieces.append(index(g, key))
        return tuple(pieces)

    return Tensor.from_op(data, "concat", tensors, backward)


def stack_rows(vectors: Sequence, /) -> Tensor:
    """Stack 1-D tensors into the rows of a 2-D tensor."""
    return concat([reshape(as_tensor(v), (1, -1)) for v in vectors], axis=0)


# Composite operations


def l2_norm(x, /, axis=-1, keepdims: bool = False) -> Tensor:
    """Euclidean norm over *axis*.

    The gradient at a zero vector is taken to be zero (a valid subgradient).
    """
    x = as_tensor(x)
    data = np.sqrt(np.sum(x.data * x.data, axis=axis, keepdims=keepdims))

    def backward(g):
        kept = _keepdims_shape(x.shape, axis)
        norm = reshape(out, kept)
        safe = add(norm, (norm.data == 0).astype(np.float64))
        return (mul(x, mul(reshape(g, kept), reciprocal(safe))),)

    out = Tensor.from_op(data, "l2_norm", (x,), backward)
    return out


def softmax(x, /, axis: int = -1) -> Tensor:
    """Softmax over *axis*."""
    x = as_tensor(x)
    shift = Tensor(np.max(x.data, axis=axis, keepdims=True))
    e = exp(sub(x, shift))
    return div(e, sum(e, axis=axis, keepdims=True))


def log_softmax(x, /, axis: int = -1) -> Tensor:
    """Logarithm of `softmax`, computed without forming the probabilities."""
    x = as_tensor(x)
    shifted = sub(x, Tensor(np.max(x.data, axis=axis, keepdims=True)))
    return sub(shifted, log(sum(exp(shifted), axis=axis, keepdims=True)))


def cosine_similarity(a, b, /, axis: int = -1) -> Tensor:
    """Cosine similarity over *axis*, broadcasting *a* against *b*.

    Raises:
        NumericalError: If either side contains a zero-norm vector.
    """
    a, b = as_tensor(a), as_tensor(b)
    norm_a, norm_b = l2_norm(a, axis=axis), l2_norm(b, axis=axis)
    if (norm_a.data == 0).any() or (norm_b.data == 0).any():
        raise NumericalError(
            "zero-norm vector in cosine similarity (uninitialized embeddings?)",
            op="cosine_similarity",
        )
    return div(sum(mul(a, b), axis=axis), mul(norm_a, norm_b))


def layer_norm(x, gamma, beta, /, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis of *x*, then scale by *gamma* and shift by *beta*."""
    x = as_tensor(x)
    centered = sub(x, mean(x, axis=-1, keepdims=True))
    variance = mean(mul(centered, centered), axis=-1, keepdims=True)
    scaled = mul(centered, reciprocal(sqrt(add(variance, eps))))
    return add(mul(scaled, gamma), beta)


def dropout_mask(
    shape: Sequence[int],
    rate: float,
    rng: Optional[np.random.Generator],
    /,
) -> Tensor:
    """Constant keep-mask scaled by ``1 / (1 - rate)``; all ones when *rate* is 0."""
    if not 0 <= rate < 1:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if rate == 0 or rng is None:
        return Tensor(np.ones(tuple(shape)))
    keep = rng.random(tuple(shape)) >= rate
    return Tensor(keep / (1.0 - rate))


__all__ = (
    "as_tensor",
    "sum_to",
    "broadcast_to",
    "add",
    "sub",
    "mul",
    "neg",
    "reciprocal",
    "div",
    "exp",
    "log",
    "sqrt",
    "tanh",
    "relu",
    "reshape",
    "transpose",
    "sum",
    "mean",
    "matmul",
    "index",
    "index_add",
    "take_rows",
    "concat",
    "stack_rows",
    "l2_norm",
    "softmax",
    "log_softmax",
    "cosine_similarity",
    "layer_norm",
    "dropout_mask",
)
