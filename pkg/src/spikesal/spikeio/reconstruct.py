"""Texture reconstruction from inter-spike intervals.

A pixel firing every k ticks under steady light of intensity theta/k is
assigned gray value max_gray / k: intensity is inversely proportional to
the local inter-spike interval.
"""
from __future__ import annotations

import numpy as np

from .stream import SpikeStream

__all__ = ["tfi_reconstruct"]


def tfi_reconstruct(stream: SpikeStream, tick: int, max_gray: float = 255.0) -> np.ndarray:
    """Reconstruct a gray image at `tick` from bracketing spike intervals.

    For spike times t_1 < ... < t_n of a pixel, the interval (t_j, t_j+1]
    containing `tick` defines dt = t_j+1 - t_j and the value max_gray / dt.
    Edge rules: before the first spike the first interval is used; after
    the last spike dt = max(last interval, tick - t_n), so stale pixels
    fade as their information ages. Pixels with fewer than two spikes are
    0. Output: float image [H, W] in [0, max_gray].
    """
    if not 0 <= tick < stream.num_ticks:
        raise IndexError(f"tick {tick} out of range [0, {stream.num_ticks})")
    bits = stream.bits
    T, H, W = bits.shape
    flat = bits.reshape(T, H * W)
    out = np.zeros(H * W)
    counts = flat.sum(axis=0)
    for p in np.nonzero(counts >= 2)[0]:
        times = np.flatnonzero(flat[:, p])
        gaps = np.diff(times)
        if tick <= times[0]:
            dt = gaps[0]
        elif tick > times[-1]:
            dt = max(gaps[-1], tick - times[-1])
        else:
            # j such that times[j] < tick <= times[j+1]
            j = int(np.searchsorted(times, tick, side="left")) - 1
            dt = gaps[j]
        out[p] = max_gray / dt
    return out.reshape(H, W)
