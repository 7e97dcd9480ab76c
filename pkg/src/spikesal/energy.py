"""Theoretical energy accounting for spiking inference.

Binary-input layers perform accumulates only (one add per incoming spike
per output channel); real-valued layers perform full multiply-accumulates.
Counts convert to millijoules with the standard 45 nm estimates of 0.9 pJ
per AC and 4.6 pJ per MAC.

Counting is at layer granularity: convolutions, the attention matmuls and
linear layers are counted; normalization, bias adds and other elementwise
work are excluded from both tallies.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

AC_PJ = 0.9
MAC_PJ = 4.6

__all__ = ["OpCounter", "energy_mj", "count_inference", "AC_PJ", "MAC_PJ"]


class OpCounter:
    """Accumulates AC and MAC counts across a forward pass. Pass an
    instance as `counter=` to model forwards; layers report into it."""

    def __init__(self):
        self.ac = 0
        self.mac = 0
        self.by_layer: list[tuple[str, str, int]] = []

    def reset(self) -> None:
        self.ac = 0
        self.mac = 0
        self.by_layer.clear()

    def _log(self, kind: str, tag: str, n: int) -> None:
        self.by_layer.append((tag, kind, n))
        if kind == "ac":
            self.ac += n
        else:
            self.mac += n

    def count_conv(self, x, w_shape, stride, padding, spike_input: bool,
                   depthwise: bool = False) -> None:
        """x: input array [B, C, H, W] (pre-padding). Binary inputs count
        one AC per active input inside each output window, times the
        output channels it feeds; real inputs count dense MACs."""
        x = np.asarray(x)
        kh, kw = w_shape[-2], w_shape[-1]
        b, cin, h, w = x.shape
        ho = (h + 2 * padding - kh) // stride + 1
        wo = (w + 2 * padding - kw) // stride + 1
        cout = w_shape[0]
        if spike_input:
            if padding:
                xp = np.zeros((b, cin, h + 2 * padding, w + 2 * padding), dtype=x.dtype)
                xp[:, :, padding:padding + h, padding:padding + w] = x
            else:
                xp = x
            nonzero = (xp != 0).astype(np.int64)
            windows = sliding_window_view(nonzero, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
            hits = int(windows.sum())
            n = hits if depthwise else hits * cout
            self._log("ac", "conv", n)
        else:
            per_out = kh * kw if depthwise else cin * kh * kw
            self._log("mac", "conv", b * cout * ho * wo * per_out)

    def count_linear(self, x, w_shape) -> None:
        x = np.asarray(x)
        cin, cout = w_shape
        batch = int(np.prod(x.shape[:-1]))
        self._log("mac", "linear", batch * cin * cout)

    def count_matmul(self, a_shape, b_shape) -> None:
        n, m = a_shape[-2], a_shape[-1]
        p = b_shape[-1]
        batch = int(np.prod(a_shape[:-2])) if len(a_shape) > 2 else 1
        self._log("mac", "matmul", batch * n * m * p)


def energy_mj(ac: int, mac: int) -> float:
    return (AC_PJ * ac + MAC_PJ * mac) * 1e-9


def count_inference(model, spikes) -> dict:
    """Run one gradient-free eval forward over `spikes` [T, B, 1, H, W]
    and return the operation counts and the energy estimate in mJ."""
    from .autodiff import Tensor, no_grad

    counter = OpCounter()
    was_training = model.training
    model.eval()
    try:
        with no_grad():
            x = spikes if isinstance(spikes, Tensor) else Tensor(np.asarray(spikes, dtype=np.float64))
            model(x, counter=counter)
    finally:
        if was_training:
            model.train()
    return {
        "ac": counter.ac,
        "mac": counter.mac,
        "energy_mj": energy_mj(counter.ac, counter.mac),
    }
