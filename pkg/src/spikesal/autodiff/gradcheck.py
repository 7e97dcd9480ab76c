"""Finite-difference validation of every registered op's backward pass.

grad_check scalarizes an op with a fixed random projection, computes the
autodiff gradient for every input element and compares it against central
finite differences in double precision. Sampled points are kept away from
kinks (pool ties, clamps, |x| near zero for non-smooth elementwise ops) by
construction in the case registry.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import ops
from .tensor import (
    Tensor,
    concat,
    leaky_relu,
    log,
    matmul,
    narrow,
    no_grad,
    relu,
    reshape,
    sigmoid,
    softmax,
    sqrt,
    stack,
    tmean,
    transpose,
    tsum,
    exp,
    power,
)

__all__ = ["grad_check", "GradCheckResult", "OpCase", "standard_op_cases"]


@dataclass
class GradCheckResult:
    op: str
    max_rel_err: float
    passed: bool
    worst_input: int = -1
    worst_index: tuple = ()

    def message(self) -> str:
        if self.passed:
            return f"{self.op}: max rel err {self.max_rel_err:.3e}"
        return (
            f"{self.op}: gradient mismatch at input {self.worst_input} "
            f"index {self.worst_index}, rel err {self.max_rel_err:.3e}"
        )


def grad_check(
    fn: Callable[..., Tensor],
    inputs: Sequence[Tensor],
    epsilon: float = 1e-5,
    tolerance: float = 1e-4,
    rng: np.random.Generator | None = None,
    name: str = "op",
) -> GradCheckResult:
    """Compare autodiff gradients of fn(*inputs) against central differences.

    Relative error uses denominator max(1, |analytic|, |numeric|), i.e. it is
    an absolute comparison for small entries.
    """
    rng = rng or np.random.default_rng(0)
    for t in inputs:
        t.requires_grad = True
        t.grad = None
    out = fn(*inputs)
    w = rng.standard_normal(out.shape)
    loss = (out * Tensor(w)).sum()
    loss.backward()
    analytic = [np.zeros(t.shape) if t.grad is None else t.grad.copy() for t in inputs]

    def scalar() -> float:
        with no_grad():
            return float((fn(*inputs).data * w).sum())

    worst = GradCheckResult(op=name, max_rel_err=0.0, passed=True)
    for i, t in enumerate(inputs):
        flat = t.data.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + epsilon
            fp = scalar()
            flat[j] = orig - epsilon
            fm = scalar()
            flat[j] = orig
            numeric = (fp - fm) / (2.0 * epsilon)
            a = analytic[i].reshape(-1)[j]
            rel = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
            if rel > worst.max_rel_err:
                worst.max_rel_err = rel
                worst.worst_input = i
                worst.worst_index = np.unravel_index(j, t.shape)
    worst.passed = worst.max_rel_err < tolerance
    return worst


# -- standard case registry ------------------------------------------------------


@dataclass
class OpCase:
    """One checkable op: builds (fn, fresh inputs) at a random safe point."""

    name: str
    build: Callable[[np.random.Generator], tuple[Callable[..., Tensor], list[Tensor]]]


def _t(rng, *shape, lo=-1.0, hi=1.0) -> Tensor:
    return Tensor(rng.uniform(lo, hi, size=shape), requires_grad=True)


def _t_away_from_zero(rng, *shape, margin=0.15) -> Tensor:
    x = rng.uniform(margin, 1.0, size=shape) * rng.choice([-1.0, 1.0], size=shape)
    return Tensor(x, requires_grad=True)


def _pool_safe(rng, b, c, h, w, kernel, stride, margin=0.05) -> Tensor:
    """Input whose within-window top-two gap exceeds `margin` (no argmax ties)."""
    from numpy.lib.stride_tricks import sliding_window_view

    while True:
        x = rng.uniform(-1.0, 1.0, size=(b, c, h, w))
        win = sliding_window_view(x, (kernel, kernel), axis=(2, 3))[:, :, ::stride, ::stride]
        win = win.reshape(*win.shape[:4], -1)
        top2 = np.sort(win, axis=-1)[..., -2:]
        if np.all(top2[..., 1] - top2[..., 0] > margin):
            return Tensor(x, requires_grad=True)


def standard_op_cases() -> list[OpCase]:
    """Every registered differentiable op, with non-degenerate sampling.

    The spike threshold (surrogate.heaviside) is excluded by design: its
    backward is a surrogate, not the true derivative, so finite differences
    cannot agree with it. It is tested against its closed form separately.
    """
    cases: list[OpCase] = []

    def case(name):
        def deco(fn):
            cases.append(OpCase(name, fn))
            return fn

        return deco

    @case("add")
    def _(rng):
        return (lambda a, b: a + b), [_t(rng, 3, 4), _t(rng, 3, 4)]

    @case("add_broadcast")
    def _(rng):
        return (lambda a, b: a + b), [_t(rng, 2, 3, 4), _t(rng, 1, 4)]

    @case("sub")
    def _(rng):
        return (lambda a, b: a - b), [_t(rng, 3, 4), _t(rng, 3, 4)]

    @case("mul")
    def _(rng):
        return (lambda a, b: a * b), [_t(rng, 3, 4), _t(rng, 3, 4)]

    @case("mul_broadcast")
    def _(rng):
        return (lambda a, b: a * b), [_t(rng, 2, 3, 4), _t(rng, 3, 1)]

    @case("div")
    def _(rng):
        return (lambda a, b: a / b), [_t(rng, 3, 4), _t_away_from_zero(rng, 3, 4, margin=0.3)]

    @case("neg")
    def _(rng):
        return (lambda a: -a), [_t(rng, 3, 4)]

    @case("pow")
    def _(rng):
        return (lambda a: power(a, 3.0)), [_t_away_from_zero(rng, 3, 4)]

    @case("exp")
    def _(rng):
        return exp, [_t(rng, 3, 4)]

    @case("log")
    def _(rng):
        return log, [_t(rng, 3, 4, lo=0.2, hi=2.0)]

    @case("sqrt")
    def _(rng):
        return sqrt, [_t(rng, 3, 4, lo=0.2, hi=2.0)]

    @case("relu")
    def _(rng):
        return relu, [_t_away_from_zero(rng, 3, 4)]

    @case("leaky_relu")
    def _(rng):
        return (lambda a: leaky_relu(a, 0.2)), [_t_away_from_zero(rng, 3, 4)]

    @case("sigmoid")
    def _(rng):
        return sigmoid, [_t(rng, 3, 4, lo=-3.0, hi=3.0)]

    @case("softmax")
    def _(rng):
        return softmax, [_t(rng, 2, 5, lo=-2.0, hi=2.0)]

    @case("sum")
    def _(rng):
        return (lambda a: tsum(a)), [_t(rng, 3, 4)]

    @case("sum_axis")
    def _(rng):
        return (lambda a: tsum(a, axis=(0, 2), keepdims=True)), [_t(rng, 2, 3, 4)]

    @case("mean")
    def _(rng):
        return (lambda a: tmean(a)), [_t(rng, 3, 4)]

    @case("mean_axis")
    def _(rng):
        return (lambda a: tmean(a, axis=1)), [_t(rng, 2, 3, 4)]

    @case("reshape")
    def _(rng):
        return (lambda a: reshape(a, (4, 3))), [_t(rng, 3, 4)]

    @case("transpose")
    def _(rng):
        return (lambda a: transpose(a, (2, 0, 1))), [_t(rng, 2, 3, 4)]

    @case("concat")
    def _(rng):
        return (lambda a, b: concat([a, b], axis=1)), [_t(rng, 2, 3), _t(rng, 2, 2)]

    @case("narrow")
    def _(rng):
        return (lambda a: narrow(a, 1, 1, 2)), [_t(rng, 3, 4)]

    @case("stack")
    def _(rng):
        return (lambda a, b: stack([a, b], axis=1)), [_t(rng, 2, 3), _t(rng, 2, 3)]

    @case("matmul")
    def _(rng):
        return matmul, [_t(rng, 3, 4), _t(rng, 4, 2)]

    @case("matmul_batched")
    def _(rng):
        return matmul, [_t(rng, 2, 3, 4), _t(rng, 2, 4, 2)]

    @case("matmul_broadcast")
    def _(rng):
        return matmul, [_t(rng, 2, 3, 4), _t(rng, 4, 2)]

    @case("conv2d")
    def _(rng):
        fn = lambda x, w, b: ops.conv2d(x, w, b, stride=1, padding=1)
        return fn, [_t(rng, 1, 2, 5, 5), _t(rng, 3, 2, 3, 3), _t(rng, 3)]

    @case("conv2d_stride2")
    def _(rng):
        fn = lambda x, w: ops.conv2d(x, w, stride=2, padding=1)
        return fn, [_t(rng, 1, 2, 6, 6), _t(rng, 2, 2, 3, 3)]

    @case("dwconv2d")
    def _(rng):
        fn = lambda x, w, b: ops.dwconv2d(x, w, b, stride=1, padding=1)
        return fn, [_t(rng, 1, 3, 5, 5), _t(rng, 3, 1, 3, 3), _t(rng, 3)]

    @case("maxpool2d")
    def _(rng):
        return (lambda x: ops.maxpool2d(x, 2)), [_pool_safe(rng, 1, 2, 4, 4, 2, 2)]

    @case("maxpool2d_overlap")
    def _(rng):
        return (lambda x: ops.maxpool2d(x, 3, stride=1)), [_pool_safe(rng, 1, 1, 5, 5, 3, 1)]

    @case("upsample_bilinear")
    def _(rng):
        return (lambda x: ops.upsample_bilinear(x, 2)), [_t(rng, 1, 2, 3, 3)]

    @case("batchnorm2d_train")
    def _(rng):
        rm, rv = np.zeros(3), np.ones(3)
        fn = lambda x, g, b: ops.batchnorm2d(x, g, b, rm, rv, training=True)
        return fn, [_t(rng, 2, 3, 4, 4), _t(rng, 3, lo=0.5, hi=1.5), _t(rng, 3)]

    @case("batchnorm2d_eval")
    def _(rng):
        rm = rng.uniform(-0.5, 0.5, 3)
        rv = rng.uniform(0.5, 1.5, 3)
        fn = lambda x, g, b: ops.batchnorm2d(x, g, b, rm, rv, training=False)
        return fn, [_t(rng, 2, 3, 4, 4), _t(rng, 3, lo=0.5, hi=1.5), _t(rng, 3)]

    @case("mse")
    def _(rng):
        return ops.mse, [_t(rng, 3, 4), _t(rng, 3, 4)]

    @case("bce")
    def _(rng):
        pred = Tensor(rng.uniform(0.05, 0.95, size=(3, 4)), requires_grad=True)
        tgt = Tensor(rng.uniform(0.0, 1.0, size=(3, 4)), requires_grad=True)
        return ops.bce, [pred, tgt]

    return cases
