"""Tensor core: forward values, backward rules, graph semantics."""
import numpy as np
import pytest

from spikesal.autodiff import (
    ShapeError,
    Tensor,
    concat,
    matmul,
    narrow,
    no_grad,
    reshape,
    sigmoid,
    softmax,
    split,
    stack,
)


def t(data, rg=True):
    return Tensor(np.asarray(data, dtype=np.float64), requires_grad=rg)


def test_add_mul_broadcast_grads():
    a = t([[1.0, 2.0], [3.0, 4.0]])
    b = t([10.0, 20.0])
    out = (a * b + b).sum()
    out.backward()
    assert np.array_equal(a.grad, np.broadcast_to([10.0, 20.0], (2, 2)))
    # d/db sum(a*b + b) = sum_rows(a) + 2
    assert np.array_equal(b.grad, np.array([1.0 + 3.0 + 2.0, 2.0 + 4.0 + 2.0]))


def test_scalar_broadcast_unbroadcast():
    a = t(np.ones((3, 1, 4)))
    b = t(np.ones((5, 1)))
    (a + b).sum().backward()
    assert a.grad.shape == (3, 1, 4)
    assert b.grad.shape == (5, 1)
    assert np.all(a.grad == 5.0)
    assert np.all(b.grad == 12.0)


def test_diamond_graph_accumulates_once():
    x = t([2.0])
    y = x * x      # used twice below
    z = (y + y).sum()
    z.backward()
    assert np.allclose(x.grad, [8.0])


def test_backward_requires_scalar_without_seed():
    x = t([[1.0, 2.0]])
    with pytest.raises(RuntimeError):
        (x * 2).backward()


def test_backward_seed_shape_checked():
    x = t([1.0, 2.0])
    with pytest.raises(ShapeError):
        (x * 2).backward(np.ones((3,)))


def test_no_grad_blocks_graph():
    x = t([1.0, 2.0])
    with no_grad():
        y = x * 3
    assert not y.requires_grad
    assert y._parents == ()


def test_freeze_at_build_time_pins_edges():
    # an op recorded while a leaf does not require grad must not route
    # gradient into it even after the flag is flipped back
    x = t([1.0, 2.0])
    w = t([3.0, 4.0])
    w.requires_grad = False
    y = (x * w).sum()
    w.requires_grad = True
    y.backward()
    assert w.grad is None
    assert np.array_equal(x.grad, [3.0, 4.0])


def test_matmul_batched_grads():
    rng = np.random.default_rng(0)
    a = t(rng.random((2, 3, 4)))
    b = t(rng.random((4, 5)))
    out = matmul(a, b)
    assert out.shape == (2, 3, 5)
    out.sum().backward()
    assert a.grad.shape == (2, 3, 4)
    assert b.grad.shape == (4, 5)
    ga = np.ones((2, 3, 5)) @ b.data.T
    assert np.allclose(a.grad, ga)


def test_softmax_rows_sum_to_one_and_grad_orthogonal_to_ones():
    rng = np.random.default_rng(1)
    x = t(rng.standard_normal((4, 7)))
    y = softmax(x)
    assert np.allclose(y.data.sum(axis=1), 1.0)
    (y * t(rng.standard_normal((4, 7)), rg=False)).sum().backward()
    # rows of the softmax Jacobian are orthogonal to the all-ones vector
    assert np.allclose(x.grad.sum(axis=1), 0.0, atol=1e-12)


def test_sigmoid_stable_at_extremes():
    x = t([-1000.0, 0.0, 1000.0])
    y = sigmoid(x)
    assert np.all(np.isfinite(y.data))
    assert np.allclose(y.data, [0.0, 0.5, 1.0])


def test_concat_and_split_roundtrip():
    a = t(np.arange(6.0).reshape(2, 3))
    b = t(np.arange(6.0, 12.0).reshape(2, 3))
    c = concat([a, b], axis=0)
    parts = split(c, 2, axis=0)
    assert np.array_equal(parts[0].data, a.data)
    assert np.array_equal(parts[1].data, b.data)
    parts[1].sum().backward()
    assert np.array_equal(a.grad, np.zeros((2, 3)))
    assert np.array_equal(b.grad, np.ones((2, 3)))


def test_narrow_grad_zero_outside_window():
    x = t(np.arange(10.0))
    narrow(x, 0, 3, 4).sum().backward()
    expect = np.zeros(10)
    expect[3:7] = 1.0
    assert np.array_equal(x.grad, expect)


def test_stack_and_reshape():
    a, b = t([1.0, 2.0]), t([3.0, 4.0])
    s = stack([a, b], axis=0)
    assert s.shape == (2, 2)
    reshape(s, (4,)).sum().backward()
    assert np.array_equal(a.grad, [1.0, 1.0])
    assert np.array_equal(b.grad, [1.0, 1.0])


def test_mean_axis_tuple():
    x = t(np.ones((2, 3, 4)))
    m = x.mean(axis=(0, 2))
    assert m.shape == (3,)
    m.sum().backward()
    assert np.allclose(x.grad, 1.0 / 8.0)


def test_getitem_is_rejected_with_guidance():
    x = t([1.0, 2.0])
    with pytest.raises(TypeError, match="narrow"):
        _ = x[0]


def test_grad_accumulates_across_backwards():
    x = t([1.0])
    (x * 2).sum().backward()
    (x * 3).sum().backward()
    assert np.allclose(x.grad, [5.0])


def test_leaf_detach_shares_no_graph():
    x = t([1.0, 2.0])
    d = x.detach()
    assert not d.requires_grad
    (d * 2).sum()
    assert x.grad is None
