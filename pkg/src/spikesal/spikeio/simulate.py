"""Integrate-and-fire spike camera simulation.

Each pixel accumulates incoming luminance tick by tick; when the
accumulator reaches the firing threshold the pixel emits a binary spike
and the threshold is subtracted, carrying the remainder forward.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["IntensityClip", "simulate_spikes"]


@dataclass
class IntensityClip:
    """Luminance video: frames [num_ticks, H, W], values in [0, 1]."""

    frames: np.ndarray

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 3:
            raise ValueError(f"clip frames must be [T, H, W], got ndim={self.frames.ndim}")
        if self.frames.shape[0] < 1:
            raise ValueError("clip needs at least one tick")
        if self.frames.min() < 0.0 or self.frames.max() > 1.0:
            raise ValueError("luminance must lie in [0, 1]")

    @property
    def num_ticks(self) -> int:
        return self.frames.shape[0]


def simulate_spikes(clip: IntensityClip, theta: float, return_residual: bool = False):
    """Run the integrate-to-threshold model over a clip.

    Per pixel and tick: A += I; if A >= theta, emit 1 and subtract theta,
    else emit 0. The residual carries across ticks, so per pixel
    n_spikes * theta <= integrated intensity < (n_spikes + 1) * theta
    whenever theta >= the per-tick peak intensity. If a single tick
    delivers more than theta the stream saturates at one spike per tick
    and the upper bound can be exceeded (at most one bit per tick exists).

    Returns a SpikeStream; with return_residual=True also the final
    accumulator image.
    """
    from .stream import SpikeStream

    if not theta > 0:
        raise ValueError(f"theta must be positive, got {theta}")
    frames = clip.frames
    T, H, W = frames.shape
    acc = np.zeros((H, W))
    bits = np.zeros((T, H, W), dtype=np.uint8)
    for t in range(T):
        acc += frames[t]
        fired = acc >= theta
        bits[t] = fired
        acc[fired] -= theta
    stream = SpikeStream(bits)
    if return_residual:
        return stream, acc
    return stream
