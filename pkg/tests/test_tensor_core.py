import threading
import numpy as np
import pytest
from hirex.errors import NumericalError
from hirex.tensor import (
    ComputeGraph,
    Tensor,
    backward,
    grad,
    grad_mode,
    is_grad_enabled,
    no_grad,
    ops,
)


def test_square_gradient():
    x = Tensor([3.0], requires_grad=True)
    grads = backward((x * x).sum())
    assert grads[x].item() == pytest.approx(6.0)


def test_norm_gradient():
    x = Tensor([3.0, 4.0], requires_grad=True)
    grads = backward(ops.l2_norm(x))
    np.testing.assert_allclose(grads[x].data, [0.6, 0.8])


def test_disconnected_input_gets_zero_gradient():
    x = Tensor([1.0, 2.0], requires_grad=True)
    p = Tensor([[5.0, 6.0]], requires_grad=True)
    grads = backward((x * 2.0).sum(), inputs=[x, p])
    np.testing.assert_array_equal(grads[p].data, np.zeros((1, 2)))
    np.testing.assert_array_equal(grads[x].data, [2.0, 2.0])


def test_shared_subexpression_accumulates():
    x = Tensor([2.0], requires_grad=True)
    y = x * x
    loss = (y + y * 3.0).sum()
    assert backward(loss)[x].item() == pytest.approx(16.0)


def test_backward_requires_scalar():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(ValueError):
        backward(x * 2.0)


def test_no_grad_disables_recording():
    x = Tensor([1.0], requires_grad=True)
    with no_grad():
        y = x * 2.0
        assert not is_grad_enabled()
    assert is_grad_enabled()
    assert not y.requires_grad
    assert y.is_leaf


def test_grad_mode_is_thread_local():
    seen = []

    def worker():
        seen.append(is_grad_enabled())

    with grad_mode(False):
        thread = threading.Thread(target=worker)
        thread.start()
        thread.join()
    assert seen == [True]


def test_second_order_gradient():
    x = Tensor([1.5], requires_grad=True)
    loss = (x * x * x).sum()
    (first,) = grad(loss, [x], create_graph=True)
    assert first.item() == pytest.approx(3 * 1.5**2)
    (second,) = grad(first.sum(), [x])
    assert second.item() == pytest.approx(6 * 1.5)


def test_gradients_are_constants_without_create_graph():
    x = Tensor([1.5], requires_grad=True)
    (first,) = grad((x * x).sum(), [x])
    assert not first.requires_grad


def test_intermediate_inputs_stop_traversal():
    w = Tensor([2.0], requires_grad=True)
    h = w * 3.0
    loss = (h * h).sum()
    graph = ComputeGraph(loss, leaves=[h])
    assert graph.is_leaf(h)
    assert w not in graph
    assert backward(loss, inputs=[h], graph=graph)[h].item() == pytest.approx(12.0)


def test_graph_can_be_reused():
    x = Tensor([1.0, -2.0], requires_grad=True)
    loss = (x * x).sum()
    graph = ComputeGraph(loss)
    first = backward(loss, graph=graph)[x].data
    second = backward(loss, graph=graph)[x].data
    np.testing.assert_array_equal(first, second)


def test_nonfinite_forward_names_op():
    with pytest.raises(NumericalError) as info:
        ops.log(Tensor([0.0]))
    assert info.value.op == "log"


def test_nonfinite_leaf_rejected():
    with pytest.raises(NumericalError):
        Tensor([np.nan])


def test_requires_grad_only_on_leaves():
    x = Tensor([1.0], requires_grad=True)
    with pytest.raises(ValueError):
        (x * 2.0).requires_grad_(False)


def test_tensors_hash_by_identity():
    a, b = Tensor([1.0]), Tensor([1.0])
    assert len({a: 1, b: 2}) == 2


def test_numpy_operands_on_the_left():
    x = Tensor([1.0, 2.0], requires_grad=True)
    y = np.array([3.0, 4.0]) * x
    assert isinstance(y, Tensor)
    np.testing.assert_array_equal(backward(y.sum())[x].data, [3.0, 4.0])
