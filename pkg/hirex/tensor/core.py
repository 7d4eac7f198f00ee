"""Home of `Tensor`, `ComputeGraph` and `backward`.

A `Tensor` is a dense float64 array that remembers the operation which produced it.
Calling `backward` on a scalar walks the recorded graph in reverse topological order
and returns the gradient of every leaf (or of any requested tensor).

Gradients are built from the same tensor operations as the forward pass. With
``create_graph=True`` the returned gradients carry their own graph and can be
differentiated again, which is what full (second-order) MAML needs. Otherwise they are
computed with recording disabled and behave as constants.

```python
x = Tensor([3.0], requires_grad=True)
loss = (x * x).sum()
grads = backward(loss)
grads[x].item()  # 6.0
```
"""

from typing import Any, Callable, Iterable, Optional, Sequence
from contextlib import contextmanager
import threading
import numpy as np
from ..errors import NumericalError


_state = threading.local()


def is_grad_enabled() -> bool:
    """If operations are currently recorded (per thread)."""
    return getattr(_state, "enabled", True)


@contextmanager
def grad_mode(enabled: bool, /):
    """Context manager that enables or disables recording for the current thread."""
    previous = is_grad_enabled()
    _state.enabled = enabled
    try:
        yield
    finally:
        _state.enabled = previous


def no_grad():
    """Context manager that disables recording. See `grad_mode`."""
    return grad_mode(False)


def check_finite(array: np.ndarray, op: str, /):
    """Raise `NumericalError` if *array* holds NaN or Inf."""
    if not np.isfinite(array).all():
        raise NumericalError(f"non-finite value produced by {op!r}", op=op)


BackwardFn = Callable[["Tensor"], Sequence[Optional["Tensor"]]]


class Tensor:
    """Dense float64 tensor with reverse-mode autodiff support.

    Leaves are created directly; every other tensor is the output of an operation in
    `hirex.tensor.ops` and records its parents and a backward function. Tensors hash
    by identity so they can be used as dictionary keys for gradients.
    """

    __slots__ = ("data", "requires_grad", "op", "parents", "_backward", "name")
    __array_ufunc__ = None  # numpy defers to our reflected operators

    def __init__(
        self,
        data: Any,
        /,
        *,
        requires_grad: bool = False,
        name: Optional[str] = None,
    ):
        """Initialize a leaf tensor.

        Args:
            data: Array-like values, copied and converted to float64.
            requires_grad: Track gradients for this tensor.
            name: Optional name used in error messages and checkpoints.
        """
        array = np.array(data, dtype=np.float64)
        check_finite(array, name or "leaf")
        self.data = array
        self.requires_grad = requires_grad
        self.op = "leaf"
        self.parents: tuple["Tensor", ...] = ()
        self._backward: Optional[BackwardFn] = None
        self.name = name

    @classmethod
    def from_op(
        cls,
        data: np.ndarray,
        op: str,
        parents: Iterable["Tensor"],
        backward: BackwardFn,
    ) -> "Tensor":
        """Create the output of an operation, recording it when required."""
        data = np.asarray(data, dtype=np.float64)
        check_finite(data, op)
        out = cls.__new__(cls)
        out.data = data
        out.op = op
        out.name = None
        parents = tuple(parents)
        if is_grad_enabled() and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out.parents = parents
            out._backward = backward
        else:
            out.requires_grad = False
            out.parents = ()
            out._backward = None
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        """Extents of each dimension."""
        return self.data.shape

    @property
    def ndim(self) -> int:
        """Number of dimensions."""
        return self.data.ndim

    @property
    def size(self) -> int:
        """Number of elements."""
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        """If the tensor was not produced by a recorded operation."""
        return not self.parents

    @property
    def T(self) -> "Tensor":
        """Transposed 2-D tensor."""
        return _ops.transpose(self)

    def item(self) -> float:
        """The single value of a one-element tensor."""
        return float(self.data.item())

    def numpy(self) -> np.ndarray:
        """A copy of the data."""
        return self.data.copy()

    def detach(self) -> "Tensor":
        """A new leaf sharing no graph with this tensor."""
        return Tensor(self.data, name=self.name)

    def requires_grad_(self, requires_grad: bool = True, /) -> "Tensor":
        """Set `requires_grad` in place and return self."""
        if self.parents:
            raise ValueError("Only leaf tensors can change requires_grad.")
        self.requires_grad = requires_grad
        return self

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        """See `hirex.tensor.ops.sum`."""
        return _ops.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        """See `hirex.tensor.ops.mean`."""
        return _ops.mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape) -> "Tensor":
        """See `hirex.tensor.ops.reshape`."""
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return _ops.reshape(self, shape)

    def __add__(self, other):
        return _ops.add(self, other)

    def __radd__(self, other):
        return _ops.add(other, self)

    def __sub__(self, other):
        return _ops.sub(self, other)

    def __rsub__(self, other):
        return _ops.sub(other, self)

    def __mul__(self, other):
        return _ops.mul(self, other)

    def __rmul__(self, other):
        return _ops.mul(other, self)

    def __truediv__(self, other):
        return _ops.div(self, other)

    def __rtruediv__(self, other):
        return _ops.div(other, self)

    def __neg__(self):
        return _ops.neg(self)

    def __matmul__(self, other):
        return _ops.matmul(self, other)

    def __getitem__(self, key):
        return _ops.index(self, key)

    def __repr__(self):
        """Object repr."""
        label = f" {self.name!r}" if self.name else ""
        grad = " requires_grad" if self.requires_grad else ""
        return f"<{self.__class__.__qualname__}{label} {self.op} {self.shape}{grad}>"


class ComputeGraph:
    """Topologically ordered view of the operations behind an output tensor.

    Nodes are ordered so that every node comes after all of its inputs. When *leaves*
    is given, traversal stops at those tensors and nodes that cannot reach any of them
    are dropped, so backward only does the work needed for the requested gradients.
    """

    def __init__(self, output: Tensor, /, *, leaves: Optional[Iterable[Tensor]] = None):
        """Build the graph.

        Args:
            output: Root of the graph (usually a scalar loss).
            leaves: Tensors to treat as leaves. Defaults to every tracked leaf.
        """
        self.output = output
        boundary = None if leaves is None else {id(t) for t in leaves}
        order: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(output, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            if boundary is not None and id(node) in boundary:
                continue
            for parent in node.parents:
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))
        if boundary is not None:
            kept: set[int] = set()
            pruned = []
            for node in order:
                reaches = id(node) in boundary or any(
                    id(p) in kept for p in node.parents
                )
                if reaches:
                    kept.add(id(node))
                    pruned.append(node)
            order = pruned
            self.leaves = tuple(n for n in order if id(n) in boundary)
        else:
            self.leaves = tuple(n for n in order if n.is_leaf and n.requires_grad)
        self.nodes: tuple[Tensor, ...] = tuple(order)
        self._node_ids = frozenset(id(n) for n in order)
        self._leaf_ids = frozenset(id(n) for n in self.leaves)

    def __contains__(self, tensor: Tensor) -> bool:
        """If *tensor* is a node of the graph."""
        return id(tensor) in self._node_ids

    def is_leaf(self, tensor: Tensor, /) -> bool:
        """If *tensor* is treated as a leaf of this graph."""
        return id(tensor) in self._leaf_ids

    def __len__(self) -> int:
        """Number of nodes."""
        return len(self.nodes)

    def __repr__(self):
        """Object repr."""
        return (
            f"<{self.__class__.__qualname__} {len(self.nodes)} nodes,"
            f" {len(self.leaves)} leaves>"
        )


def backward(
    loss: Tensor,
    /,
    *,
    inputs: Optional[Sequence[Tensor]] = None,
    create_graph: bool = False,
    graph: Optional[ComputeGraph] = None,
) -> dict[Tensor, Tensor]:
    """Compute gradients of a scalar *loss*.

    Args:
        loss: Scalar tensor to differentiate.
        inputs: Tensors to differentiate with respect to (leaves or intermediate
            tensors). Defaults to every tracked leaf of the graph.
        create_graph: Record the backward pass so the gradients can be differentiated
            again.
        graph: A prebuilt graph of *loss*. It is not modified and can be reused.

    Returns:
        Mapping from each input tensor to its gradient (zeros if disconnected).

    Raises:
        ValueError: If *loss* is not a scalar.
        NumericalError: If a non-finite gradient appears; the message names the
            operation whose backward produced it.
    """
    if loss.size != 1:
        raise ValueError(f"backward requires a scalar loss, got shape {loss.shape}")
    if graph is None:
        graph = ComputeGraph(loss, leaves=inputs)
    grads: dict[int, Tensor] = {id(loss): Tensor(np.ones_like(loss.data))}
    with grad_mode(create_graph):
        for node in reversed(graph.nodes):
            grad = grads.get(id(node))
            if grad is None or graph.is_leaf(node) or node._backward is None:
                continue
            contributions = node._backward(grad)
            for parent, contribution in zip(node.parents, contributions):
                if contribution is None or parent not in graph:
                    continue
                check_finite(contribution.data, f"{node.op} (backward)")
                previous = grads.get(id(parent))
                if previous is None:
                    grads[id(parent)] = contribution
                else:
                    grads[id(parent)] = previous + contribution
    targets = graph.leaves if inputs is None else inputs
    result = dict()
    for target in targets:
        grad = grads.get(id(target))
        if grad is None:
            grad = Tensor(np.zeros_like(target.data))
        result[target] = grad
    return result


def grad(
    loss: Tensor,
    inputs: Sequence[Tensor],
    /,
    *,
    create_graph: bool = False,
) -> list[Tensor]:
    """Gradients of *loss* with respect to *inputs*, in order. See `backward`."""
    grads = backward(loss, inputs=inputs, create_graph=create_graph)
    return [grads[t] for t in inputs]


from . import ops as _ops  # noqa: E402


__all__ = (
    "Tensor",
    "ComputeGraph",
    "backward",
    "grad",
    "no_grad",
    "grad_mode",
    "is_grad_enabled",
    "check_finite",
)
