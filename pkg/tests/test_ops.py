"""Structured ops: convolution, pooling, upsampling, normalization, losses."""
import numpy as np
import pytest

from spikesal.autodiff import (
    Tensor,
    batchnorm2d,
    bce,
    conv2d,
    dwconv2d,
    maxpool2d,
    mse,
    upsample_bilinear,
)
from _naive import conv2d_loops


def t(data, rg=True):
    return Tensor(np.asarray(data, dtype=np.float64), requires_grad=rg)


def test_conv2d_matches_loop_oracle():
    rng = np.random.default_rng(0)
    for stride, padding in [(1, 1), (1, 0), (2, 1)]:
        x = rng.random((2, 3, 7, 8))
        w = rng.standard_normal((4, 3, 3, 3))
        b = rng.standard_normal(4)
        got = conv2d(t(x), t(w), t(b), stride=stride, padding=padding)
        want = conv2d_loops(x, w, b, stride=stride, padding=padding)
        assert got.shape == want.shape
        assert np.allclose(got.data, want, atol=1e-12)


def test_dwconv_equals_grouped_conv():
    rng = np.random.default_rng(1)
    x = rng.random((2, 4, 6, 6))
    w = rng.standard_normal((4, 1, 3, 3))
    got = dwconv2d(t(x), t(w), None, stride=1, padding=1)
    for c in range(4):
        want = conv2d_loops(x[:, c:c + 1], w[c:c + 1], None, 1, 1)
        assert np.allclose(got.data[:, c:c + 1], want, atol=1e-12)


def test_maxpool_values_and_tie_routing():
    x = t([[[[1.0, 1.0], [0.0, 1.0]]]])
    y = maxpool2d(x, 2)
    assert y.data.reshape(()) == 1.0
    y.sum().backward()
    # ties route the whole gradient to the first maximum in row-major order
    assert np.array_equal(x.grad[0, 0], [[1.0, 0.0], [0.0, 0.0]])


def test_maxpool_grad_hits_argmax_only():
    rng = np.random.default_rng(2)
    x = t(rng.random((2, 3, 4, 6)))
    y = maxpool2d(x, 2)
    y.sum().backward()
    assert x.grad.sum() == y.data.size
    assert ((x.grad == 0) | (x.grad == 1)).all()


def test_upsample_constant_stays_constant():
    x = t(np.full((1, 2, 5, 7), 3.25))
    y = upsample_bilinear(x, 2)
    assert y.shape == (1, 2, 10, 14)
    assert np.all(y.data == 3.25)


def test_upsample_adjoint_preserves_mass():
    # the backward of a linear map is its transpose: grad wrt x of sum(y)
    # equals column sums of the interpolation matrix
    x = t(np.zeros((1, 1, 4, 4)))
    upsample_bilinear(x, 2).sum().backward()
    assert np.isclose(x.grad.sum(), 64.0)


def test_batchnorm_train_normalizes_and_eval_uses_buffers():
    rng = np.random.default_rng(3)
    x = rng.random((4, 3, 5, 5)) * 3 + 1
    gamma = t(np.ones(3))
    beta = t(np.zeros(3))
    rm = np.zeros(3)
    rv = np.ones(3)
    y = batchnorm2d(t(x), gamma, beta, rm, rv, training=True, momentum=0.1)
    assert np.allclose(y.data.mean(axis=(0, 2, 3)), 0.0, atol=1e-10)
    assert np.allclose(y.data.var(axis=(0, 2, 3)), 1.0, atol=1e-3)
    # buffers moved toward batch statistics
    assert np.allclose(rm, 0.1 * x.mean(axis=(0, 2, 3)))
    y2 = batchnorm2d(t(x), gamma, beta, rm, rv, training=False)
    want = (x - rm[None, :, None, None]) / np.sqrt(rv[None, :, None, None] + 1e-5)
    assert np.allclose(y2.data, want)


def test_batchnorm_backward_flows_to_input_and_affine():
    rng = np.random.default_rng(4)
    x = t(rng.random((2, 3, 4, 4)))
    gamma = t(rng.random(3) + 0.5)
    beta = t(rng.random(3))
    rm, rv = np.zeros(3), np.ones(3)
    y = batchnorm2d(x, gamma, beta, rm, rv, training=True)
    (y * y).sum().backward()
    assert x.grad is not None and np.isfinite(x.grad).all()
    assert gamma.grad is not None and beta.grad is not None


def test_mse_and_bce_values():
    p = t([0.25, 0.75])
    g = Tensor([0.0, 1.0])
    assert np.isclose(mse(p, g).data, (0.25 ** 2 + 0.25 ** 2) / 2)
    want = -(np.log(0.75) + np.log(0.75)) / 2
    assert np.isclose(bce(p, g).data, want)


def test_bce_clips_instead_of_inf():
    p = t([0.0, 1.0])
    g = Tensor([1.0, 0.0])
    out = bce(p, g)
    assert np.isfinite(out.data)
    out.backward()
    assert np.isfinite(p.grad).all()


def test_conv_backward_against_numerics():
    rng = np.random.default_rng(5)
    x = t(rng.random((1, 2, 5, 5)))
    w = t(rng.standard_normal((3, 2, 3, 3)) * 0.5)
    proj = rng.standard_normal((1, 3, 5, 5))
    conv2d(x, w, None, stride=1, padding=1)
    (conv2d(x, w, None, stride=1, padding=1) * Tensor(proj)).sum().backward()
    eps = 1e-6
    idx = (0, 1, 2, 3)
    xp = x.data.copy(); xp[idx] += eps
    xm = x.data.copy(); xm[idx] -= eps
    fp = (conv2d(Tensor(xp), Tensor(w.data), None, 1, 1).data * proj).sum()
    fm = (conv2d(Tensor(xm), Tensor(w.data), None, 1, 1).data * proj).sum()
    assert np.isclose(x.grad[idx], (fp - fm) / (2 * eps), rtol=1e-6, atol=1e-8)
