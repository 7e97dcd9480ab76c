"""The full saliency network: spiking stem and pyramid, cross-step
attention at the top, skip decoder back to input resolution."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .attention import CrossStepDebias
from .autodiff import Module, ModuleList, ShapeError, Tensor, sigmoid
from .decoder import SaliencyDecoder
from .snn import LIFConfig, SpikeDownBlock, build_pyramid

__all__ = ["ModelConfig", "SaliencyNet"]


@dataclass
class ModelConfig:
    base_channels: int = 8
    heads: int = 4
    fusion: str = "learned"
    use_dwconv: bool = True
    lif: LIFConfig = field(default_factory=LIFConfig)


class SaliencyNet(Module):
    """Input: reconstructed gray frames [T, B, 1, H, W] scaled to [0, 1],
    H and W divisible by 32. Output: per-step saliency logits of the same
    spatial size."""

    def __init__(self, cfg: ModelConfig | None = None, *, rng: np.random.Generator):
        super().__init__()
        self.cfg = cfg = cfg or ModelConfig()
        C = cfg.base_channels
        self.stem = SpikeDownBlock(1, C, cfg.lif, rng=rng)
        self.pyramid_blocks = ModuleList(
            [SpikeDownBlock(C * 2**i, C * 2 ** (i + 1), cfg.lif, rng=rng) for i in range(4)]
        )
        self.debias = CrossStepDebias(16 * C, cfg.heads, cfg.fusion, cfg.use_dwconv, rng=rng)
        self.decoder = SaliencyDecoder(C, rng=rng)

    def forward(self, x: Tensor, counter=None) -> Tensor:
        if x.ndim != 5 or x.shape[2] != 1:
            raise ShapeError(f"expected [T, B, 1, H, W], got {x.shape}")
        H, W = x.shape[3], x.shape[4]
        if H % 32 or W % 32:
            raise ShapeError(f"input spatial dims must be divisible by 32, got {H}x{W}")
        f0 = self.stem(x, counter=counter, spike_input=False)
        pyramid = build_pyramid(f0, self.pyramid_blocks, counter=counter)
        fused = self.debias(pyramid.top, counter=counter)
        return self.decoder(fused, pyramid, counter=counter)

    __call__ = forward

    def saliency(self, x: Tensor, counter=None) -> Tensor:
        """Per-step sigmoid maps [T, B, 1, H, W]."""
        return sigmoid(self.forward(x, counter=counter))
