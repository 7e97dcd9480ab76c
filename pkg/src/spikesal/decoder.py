"""Skip-connected decoder restoring full-resolution saliency logits.

Four upsample+conv stages walk back up the pyramid: stage i concatenates
pyramid level 5-i at its input resolution (top level first), convolves to
width [8C, 4C, 2C, C] and doubles the spatial size. A 1-channel head plus
one final bilinear x2 undo the stem's halving, so the logits match the
network input resolution exactly.
"""
from __future__ import annotations

from .autodiff import (
    BatchNorm2d,
    Conv2d,
    Module,
    ModuleList,
    ShapeError,
    Tensor,
    concat,
    relu,
    reshape,
    upsample_bilinear,
)
from .snn import PyramidFeatures

__all__ = ["SaliencyDecoder"]


class SaliencyDecoder(Module):
    def __init__(self, base_channels: int, *, rng):
        super().__init__()
        C = base_channels
        widths = [8 * C, 4 * C, 2 * C, C]
        skips = [16 * C, 8 * C, 4 * C, 2 * C]
        ins = [16 * C] + widths[:-1]
        self.convs = ModuleList(
            [Conv2d(i + s, w, 3, padding=1, rng=rng) for i, s, w in zip(ins, skips, widths)]
        )
        self.norms = ModuleList([BatchNorm2d(w) for w in widths])
        self.head = Conv2d(C, 1, 1, rng=rng)

    def forward(self, fused: Tensor, pyramid: PyramidFeatures, counter=None) -> Tensor:
        """fused: [T, B, 16C, h, w] at the pyramid top -> logits [T, B, 1, 32h, 32w]."""
        if fused.ndim != 5:
            raise ShapeError(f"expected [T, B, C, h, w], got ndim={fused.ndim}")
        T, B = fused.shape[:2]

        def flat(t: Tensor) -> Tensor:
            return reshape(t, (t.shape[0] * t.shape[1],) + t.shape[2:])

        x = flat(fused)
        for conv, norm, skip in zip(self.convs, self.norms, reversed(pyramid.levels)):
            x = concat([x, flat(skip)], axis=1)
            x = relu(norm(conv(x, counter=counter)))
            x = upsample_bilinear(x, 2)
        x = self.head(x, counter=counter)
        x = upsample_bilinear(x, 2)
        return reshape(x, (T, B) + x.shape[1:])

    __call__ = forward
