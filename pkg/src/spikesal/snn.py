"""Spiking building blocks: LIF neurons, conv-bn-spike-pool downsampling
blocks, and the four-level feature pyramid they form.

Feature tensors are time-major: [T, B, C, H, W]. Membrane state threads
across the leading time axis, so gradients flow backward through time via
the surrogate spike derivative.
"""
from __future__ import annotations

from dataclasses import dataclass, field

from .autodiff import (
    BatchNorm2d,
    Conv2d,
    Module,
    ModuleList,
    ShapeError,
    SurrogateSpec,
    Tensor,
    heaviside,
    maxpool2d,
    reshape,
    split,
    stack,
)

__all__ = ["LIFConfig", "lif_step", "SpikeDownBlock", "PyramidFeatures", "build_pyramid"]


@dataclass(frozen=True)
class LIFConfig:
    """Integrate-and-fire neuron parameters.

    threshold: firing threshold on the membrane potential (strictly above).
    v_reset:   potential after a spike.
    leak:      multiplicative decay of the carried state per step; 1.0
               means pure integration and is the default.
    surrogate: pseudo-derivative used for the spike backward pass.
    """

    threshold: float = 1.0
    v_reset: float = 0.0
    leak: float = 1.0
    surrogate: SurrogateSpec = field(default_factory=SurrogateSpec)


def lif_step(state: Tensor | None, current: Tensor, cfg: LIFConfig) -> tuple[Tensor, Tensor]:
    """One membrane update.

    u' = leak * u + current; spike where u' > threshold; the new state is
    u' where the neuron stayed silent and exactly v_reset where it fired
    (the reset is a multiplicative select, so no rounding is involved).
    Returns (spikes, new_state).
    """
    if state is None:
        u = current
    elif cfg.leak == 1.0:
        u = state + current
    else:
        u = state * cfg.leak + current
    spikes = heaviside(u, cfg.threshold, cfg.surrogate)
    new_state = u * (1.0 - spikes) + spikes * cfg.v_reset
    return spikes, new_state


class SpikeDownBlock(Module):
    """conv3x3 -> batchnorm -> LIF -> maxpool2, halving H and W.

    BatchNorm statistics are computed per time step in train mode (running
    buffers updated step by step), so a step's output never depends on
    later steps in either mode. The LIF state starts at zero for every
    forward call and threads across the T axis.
    """

    def __init__(self, cin: int, cout: int, lif: LIFConfig | None = None, *, rng):
        super().__init__()
        self.cin = cin
        self.cout = cout
        self.lif = lif or LIFConfig()
        self.conv = Conv2d(cin, cout, 3, padding=1, rng=rng)
        self.bn = BatchNorm2d(cout)

    def forward(self, x: Tensor, counter=None, spike_input: bool = True) -> Tensor:
        if x.ndim != 5:
            raise ShapeError(f"expected [T, B, C, H, W], got ndim={x.ndim}")
        T, B, C, H, W = x.shape
        if C != self.cin:
            raise ShapeError(f"block expects {self.cin} channels, got {C}")
        if H % 2 or W % 2:
            raise ShapeError(f"spatial dims must be even to pool, got {H}x{W}")
        flat = reshape(x, (T * B, C, H, W))
        pre = self.conv(flat, counter=counter, spike_input=spike_input)
        pre = reshape(pre, (T, B, self.cout, H, W))
        state: Tensor | None = None
        outs = []
        for step in split(pre, 1, axis=0):
            s = reshape(step, (B, self.cout, H, W))
            s = self.bn(s)
            spikes, state = lif_step(state, s, self.lif)
            outs.append(maxpool2d(spikes, 2))
        return stack(outs, axis=0)

    __call__ = forward


@dataclass
class PyramidFeatures:
    """Levels 1..4: level i has C * 2**i channels at H / 2**i spatial size
    relative to the pyramid input [T, B, C, H, W]."""

    levels: list[Tensor]

    def __post_init__(self):
        if len(self.levels) != 4:
            raise ShapeError(f"pyramid must have 4 levels, got {len(self.levels)}")

    @property
    def top(self) -> Tensor:
        return self.levels[-1]


def build_pyramid(f0: Tensor, blocks: ModuleList, counter=None) -> PyramidFeatures:
    """Stack four downsampling blocks. Input spatial dims must be divisible
    by 16 so every level pools evenly."""
    if f0.ndim != 5:
        raise ShapeError(f"pyramid input must be [T, B, C, H, W], got ndim={f0.ndim}")
    T, B, C, H, W = f0.shape
    if H % 16 or W % 16:
        raise ShapeError(f"pyramid input spatial dims must be divisible by 16, got {H}x{W}")
    if len(blocks) != 4:
        raise ShapeError(f"pyramid needs exactly 4 blocks, got {len(blocks)}")
    levels = []
    x = f0
    for blk in blocks:
        x = blk(x, counter=counter, spike_input=True)
        levels.append(x)
    return PyramidFeatures(levels)
