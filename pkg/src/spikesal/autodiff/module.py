"""Parameter containers: a minimal Module base class and the layers the
saliency network is assembled from. All initialization draws from an
explicitly passed numpy Generator so runs are reproducible bit for bit.
"""
from __future__ import annotations

import contextlib
from typing import Iterator

import numpy as np

from . import ops
from .tensor import ShapeError, Tensor

__all__ = ["Module", "ModuleList", "Conv2d", "DepthwiseConv2d", "Linear", "BatchNorm2d"]


class Module:
    """Tracks parameters (Tensors with requires_grad), buffers and children."""

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_buffers", {})
        object.__setattr__(self, "_children", {})
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        if isinstance(value, Tensor) and value.requires_grad:
            self._params[name] = value
        elif isinstance(value, Module):
            self._children[name] = value
        object.__setattr__(self, name, value)

    def register_buffer(self, name: str, value: np.ndarray) -> None:
        self._buffers[name] = np.asarray(value, dtype=np.float64)
        object.__setattr__(self, name, self._buffers[name])

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, p in self._params.items():
            yield prefix + name, p
        for name, child in self._children.items():
            yield from child.named_parameters(prefix + name + ".")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name, b in self._buffers.items():
            yield prefix + name, b
        for name, child in self._children.items():
            yield from child.named_buffers(prefix + name + ".")

    def train(self, flag: bool = True) -> "Module":
        object.__setattr__(self, "training", flag)
        for child in self._children.values():
            child.train(flag)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    @contextlib.contextmanager
    def frozen(self):
        """Temporarily exclude all parameters from the autodiff graph."""
        params = self.parameters()
        for p in params:
            p.requires_grad = False
        try:
            yield self
        finally:
            for p in params:
                p.requires_grad = True

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {name: p.data.copy() for name, p in self.named_parameters()}
        state.update({name: b.copy() for name, b in self.named_buffers()})
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own: dict[str, np.ndarray] = {name: p.data for name, p in self.named_parameters()}
        own.update({name: b for name, b in self.named_buffers()})
        missing = sorted(set(own) - set(state))
        if missing:
            raise KeyError(f"state dict is missing entries: {missing}")
        for name, arr in own.items():
            src = np.asarray(state[name], dtype=np.float64)
            if src.shape != arr.shape:
                raise ShapeError(f"state entry {name}: shape {src.shape} != expected {arr.shape}")
            arr[...] = src


class ModuleList(Module):
    def __init__(self, modules):
        super().__init__()
        self._items = list(modules)
        for i, m in enumerate(self._items):
            self._children[str(i)] = m

    def __iter__(self):
        return iter(self._items)

    def __len__(self):
        return len(self._items)

    def __getitem__(self, i):
        return self._items[i]


def _param(rng: np.random.Generator, shape: tuple[int, ...], std: float) -> Tensor:
    if std == 0.0:
        return Tensor(np.zeros(shape), requires_grad=True)
    return Tensor(rng.standard_normal(shape) * std, requires_grad=True)


class Conv2d(Module):
    """3x3-style convolution layer with Kaiming-normal init."""

    def __init__(self, cin, cout, kernel, stride=1, padding=0, bias=True, *, rng):
        super().__init__()
        self.stride = stride
        self.padding = padding
        fan_in = cin * kernel * kernel
        self.weight = _param(rng, (cout, cin, kernel, kernel), np.sqrt(2.0 / fan_in))
        self.bias = _param(rng, (cout,), 0.0) if bias else None

    def forward(self, x, counter=None, spike_input: bool = False):
        if counter is not None:
            counter.count_conv(x.data, self.weight.shape, self.stride, self.padding, spike_input)
        return ops.conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)

    __call__ = forward


class DepthwiseConv2d(Module):
    """One spatial filter per channel."""

    def __init__(self, channels, kernel, stride=1, padding=0, bias=True, *, rng):
        super().__init__()
        self.stride = stride
        self.padding = padding
        fan_in = kernel * kernel
        self.weight = _param(rng, (channels, 1, kernel, kernel), np.sqrt(2.0 / fan_in))
        self.bias = _param(rng, (channels,), 0.0) if bias else None

    def forward(self, x, counter=None, spike_input: bool = False):
        if counter is not None:
            counter.count_conv(x.data, self.weight.shape, self.stride, self.padding, spike_input, depthwise=True)
        return ops.dwconv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)

    __call__ = forward


class Linear(Module):
    def __init__(self, cin, cout, bias=True, *, rng):
        super().__init__()
        self.weight = _param(rng, (cin, cout), np.sqrt(1.0 / cin))
        self.bias = _param(rng, (cout,), 0.0) if bias else None

    def forward(self, x, counter=None):
        from .tensor import matmul

        if counter is not None:
            counter.count_linear(x.data, self.weight.shape)
        y = matmul(x, self.weight)
        if self.bias is not None:
            y = y + self.bias
        return y

    __call__ = forward


class BatchNorm2d(Module):
    def __init__(self, channels, momentum=0.1, eps=1e-5, *, rng=None):
        super().__init__()
        self.momentum = momentum
        self.eps = eps
        self.gamma = Tensor(np.ones(channels), requires_grad=True)
        self.beta = Tensor(np.zeros(channels), requires_grad=True)
        self.register_buffer("running_mean", np.zeros(channels))
        self.register_buffer("running_var", np.ones(channels))

    def forward(self, x):
        return ops.batchnorm2d(
            x,
            self.gamma,
            self.beta,
            self.running_mean,
            self.running_var,
            training=self.training,
            momentum=self.momentum,
            eps=self.eps,
        )

    __call__ = forward
