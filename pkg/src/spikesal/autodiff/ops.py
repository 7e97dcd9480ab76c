"""Structured differentiable ops: convolutions, pooling, upsampling,
batch normalization and the loss primitives used by the saliency network.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import ShapeError, Tensor, as_tensor, power

__all__ = [
    "conv2d",
    "dwconv2d",
    "maxpool2d",
    "upsample_bilinear",
    "batchnorm2d",
    "mse",
    "bce",
]


def _windows(xp: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    # [B, C, Ho, Wo, kh, kw] view over the padded input.
    w = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    return w[:, :, ::stride, ::stride]


def conv2d(x, weight, bias=None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation.

    x: [B, Cin, H, W], weight: [Cout, Cin, kh, kw], bias: [Cout] or None.
    Output spatial dims: (H + 2*padding - kh) // stride + 1 and likewise for W.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 4:
        raise ShapeError(f"conv2d input must be 4-D, got ndim={x.ndim}")
    B, C, H, W = x.shape
    Co, Ci, kh, kw = weight.shape
    if Ci != C:
        raise ShapeError(f"conv2d channel mismatch: input has {C}, weight expects {Ci}")
    Ho = (H + 2 * padding - kh) // stride + 1
    Wo = (W + 2 * padding - kw) // stride + 1
    if Ho <= 0 or Wo <= 0:
        raise ShapeError(f"conv2d output would be empty: H'={Ho}, W'={Wo}")

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = _windows(xp, kh, kw, stride)
    out_data = np.einsum("bcijkl,ockl->boij", win, weight.data, optimize=True)
    parents = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (Co,):
            raise ShapeError(f"conv2d bias must have shape ({Co},), got {bias.shape}")
        out_data = out_data + bias.data[None, :, None, None]
        parents.append(bias)

    def bwd(g):
        gw = np.einsum("boij,bcijkl->ockl", g, win, optimize=True)
        gxp = np.zeros_like(xp)
        for di in range(kh):
            for dj in range(kw):
                gxp[:, :, di : di + stride * Ho : stride, dj : dj + stride * Wo : stride] += np.einsum(
                    "boij,oc->bcij", g, weight.data[:, :, di, dj], optimize=True
                )
        gx = gxp[:, :, padding : padding + H, padding : padding + W]
        if bias is not None:
            return gx, gw, g.sum(axis=(0, 2, 3))
        return gx, gw

    return Tensor._result(out_data, tuple(parents), bwd, "conv2d")


def dwconv2d(x, weight, bias=None, stride: int = 1, padding: int = 0) -> Tensor:
    """Depthwise 2-D convolution: one kh x kw filter per channel.

    x: [B, C, H, W], weight: [C, 1, kh, kw], bias: [C] or None.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    B, C, H, W = x.shape
    Cw, one, kh, kw = weight.shape
    if Cw != C or one != 1:
        raise ShapeError(f"dwconv2d weight must be [{C}, 1, k, k], got {weight.shape}")
    Ho = (H + 2 * padding - kh) // stride + 1
    Wo = (W + 2 * padding - kw) // stride + 1
    if Ho <= 0 or Wo <= 0:
        raise ShapeError(f"dwconv2d output would be empty: H'={Ho}, W'={Wo}")

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = _windows(xp, kh, kw, stride)
    wk = weight.data[:, 0]  # [C, kh, kw]
    out_data = np.einsum("bcijkl,ckl->bcij", win, wk, optimize=True)
    parents = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (C,):
            raise ShapeError(f"dwconv2d bias must have shape ({C},), got {bias.shape}")
        out_data = out_data + bias.data[None, :, None, None]
        parents.append(bias)

    def bwd(g):
        gw = np.einsum("bcij,bcijkl->ckl", g, win, optimize=True)[:, None]
        gxp = np.zeros_like(xp)
        for di in range(kh):
            for dj in range(kw):
                gxp[:, :, di : di + stride * Ho : stride, dj : dj + stride * Wo : stride] += (
                    g * wk[None, :, di, dj, None, None]
                )
        gx = gxp[:, :, padding : padding + H, padding : padding + W]
        if bias is not None:
            return gx, gw, g.sum(axis=(0, 2, 3))
        return gx, gw

    return Tensor._result(out_data, tuple(parents), bwd, "dwconv2d")


def maxpool2d(x, kernel: int = 2, stride: int | None = None) -> Tensor:
    """Max pooling. Ties route the gradient to the first max in row-major window order."""
    x = as_tensor(x)
    if x.ndim != 4:
        raise ShapeError(f"maxpool2d input must be 4-D, got ndim={x.ndim}")
    s = kernel if stride is None else stride
    B, C, H, W = x.shape
    if H < kernel or W < kernel:
        raise ShapeError(f"maxpool2d kernel {kernel} exceeds input {H}x{W}")
    Ho = (H - kernel) // s + 1
    Wo = (W - kernel) // s + 1

    win = _windows(x.data, kernel, kernel, s).reshape(B, C, Ho, Wo, kernel * kernel)
    arg = win.argmax(axis=-1)  # first max in row-major window order
    out_data = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]

    oi = np.arange(Ho)[:, None] * s
    oj = np.arange(Wo)[None, :] * s
    abs_i = oi[None, None] + arg // kernel
    abs_j = oj[None, None] + arg % kernel
    flat_idx = (abs_i * W + abs_j).reshape(B, C, -1)

    def bwd(g):
        gx = np.zeros((B, C, H * W))
        np.add.at(gx, (np.arange(B)[:, None, None], np.arange(C)[None, :, None], flat_idx), g.reshape(B, C, -1))
        return (gx.reshape(B, C, H, W),)

    return Tensor._result(out_data, (x,), bwd, "maxpool2d")


_interp_cache: dict[tuple[int, int], np.ndarray] = {}


def _interp_matrix(n_in: int, scale: int) -> np.ndarray:
    """Row-interpolation matrix [n_in*scale, n_in] for bilinear upsampling
    with half-pixel centers (source = (dst + 0.5)/scale - 0.5, edges clamped)."""
    key = (n_in, scale)
    m = _interp_cache.get(key)
    if m is not None:
        return m
    n_out = n_in * scale
    src = (np.arange(n_out) + 0.5) / scale - 0.5
    src = np.clip(src, 0.0, n_in - 1.0)
    i0 = np.floor(src).astype(int)
    i1 = np.minimum(i0 + 1, n_in - 1)
    frac = src - i0
    m = np.zeros((n_out, n_in))
    m[np.arange(n_out), i0] += 1.0 - frac
    m[np.arange(n_out), i1] += frac
    _interp_cache[key] = m
    return m


def upsample_bilinear(x, scale: int = 2) -> Tensor:
    """Bilinear upsampling by an integer factor (half-pixel convention).

    Linear map, so the backward pass is the exact adjoint. Constant inputs
    stay exactly constant (interpolation weights sum to one per output pixel).
    """
    x = as_tensor(x)
    if x.ndim != 4:
        raise ShapeError(f"upsample_bilinear input must be 4-D, got ndim={x.ndim}")
    B, C, H, W = x.shape
    rh = _interp_matrix(H, scale)
    rw = _interp_matrix(W, scale)
    out_data = np.einsum("ih,bchw,jw->bcij", rh, x.data, rw, optimize=True)

    def bwd(g):
        return (np.einsum("ih,bcij,jw->bchw", rh, g, rw, optimize=True),)

    return Tensor._result(out_data, (x,), bwd, "upsample_bilinear")


def batchnorm2d(
    x,
    gamma,
    beta,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel batch normalization over [B, C, H, W].

    In training mode the batch statistics enter the graph (gradients flow
    through them) and the running buffers are updated in place with the
    unbiased variance. In eval mode the running buffers are constants.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if x.ndim != 4:
        raise ShapeError(f"batchnorm2d input must be 4-D, got ndim={x.ndim}")
    B, C, H, W = x.shape
    if gamma.shape != (C,) or beta.shape != (C,):
        raise ShapeError(f"batchnorm2d affine params must have shape ({C},)")
    g4 = gamma.reshape((1, C, 1, 1))
    b4 = beta.reshape((1, C, 1, 1))
    if training:
        mu = x.mean(axis=(0, 2, 3), keepdims=True)
        centered = x - mu
        var = (centered * centered).mean(axis=(0, 2, 3), keepdims=True)
        n = B * H * W
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu.data.reshape(C)
        unbiased = var.data.reshape(C) * (n / max(n - 1, 1))
        running_var *= 1.0 - momentum
        running_var += momentum * unbiased
        inv = power(var + eps, -0.5)
        return centered * inv * g4 + b4
    inv = 1.0 / np.sqrt(running_var + eps)
    scale = Tensor(inv.reshape(1, C, 1, 1))
    shift = Tensor(running_mean.reshape(1, C, 1, 1))
    return (x - shift) * scale * g4 + b4


def mse(pred, target) -> Tensor:
    """Mean squared error over all elements."""
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"mse shapes differ: {pred.shape} vs {target.shape}")
    d = pred - target
    return (d * d).mean()


def bce(pred, target, eps: float = 1e-7) -> Tensor:
    """Binary cross entropy on probabilities in [0, 1].

    Predictions are clamped to [eps, 1-eps]; the clamp has zero gradient
    outside the open interval, matching its piecewise definition.
    """
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"bce shapes differ: {pred.shape} vs {target.shape}")
    p = np.clip(pred.data, eps, 1.0 - eps)
    t = target.data
    out_data = np.asarray(-(t * np.log(p) + (1.0 - t) * np.log1p(-p)).mean())
    n = pred.data.size
    inside = (pred.data > eps) & (pred.data < 1.0 - eps)

    def bwd(g):
        gp = g * inside * (p - t) / (p * (1.0 - p)) / n
        gt = g * (np.log1p(-p) - np.log(p)) / n
        return gp, gt

    return Tensor._result(out_data, (pred, target), bwd, "bce")
