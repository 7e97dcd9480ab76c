"""Cross-time-step attention for temporal debiasing.

Each step's features query the NEXT step: queries come from step t while
keys and values come from step t+1 (the final step, and a T=1 sequence,
self-attend). Information therefore flows strictly backward from t+1 into
t; perturbing step t never changes any step's keys or values, only its
own query/residual path.

Fusion modes for combining the attention output with the current step:
  "or"      logical OR of the two binarized maps (spike algebra).
  "add"     plain elementwise sum.
  "learned" projected residual plus attention, then a feed-forward block
            with its own residual.

The attention output projection starts at zero and the learned fusion's
extra projections start at identity / zero, so a fresh block passes each
step through unchanged ("or" binarizes it, an identity on spike inputs);
the attention pathway only opens as the output projection trains away
from zero.
"""
from __future__ import annotations

import numpy as np

from .autodiff import (
    Conv2d,
    DepthwiseConv2d,
    Module,
    ShapeError,
    SurrogateSpec,
    Tensor,
    heaviside,
    matmul,
    relu,
    reshape,
    softmax,
    split,
    stack,
    transpose,
)

__all__ = ["CrossStepDebias", "or_fuse", "FUSION_MODES"]

FUSION_MODES = ("or", "add", "learned")

_BINARIZE = SurrogateSpec("rectangular", 0.5)


def or_fuse(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise OR of two maps after binarizing at zero.

    On binary inputs this is exactly max(a, b): u + v - u*v equals the
    logical OR when u, v are in {0, 1}. Gradients pass through the
    binarization surrogate.
    """
    u = heaviside(a, 0.0, _BINARIZE)
    v = heaviside(b, 0.0, _BINARIZE)
    return u + v - u * v


class CrossStepDebias(Module):
    """Multi-head scaled dot-product attention across adjacent time steps.

    Channels are split into `heads` groups; spatial positions are the
    tokens. Query/key/value projections are depthwise 3x3 convolutions by
    default (pointwise 1x1 when use_dwconv=False, the ablation variant).
    """

    def __init__(self, channels: int, heads: int = 4, fusion: str = "learned", use_dwconv: bool = True, *, rng):
        super().__init__()
        if fusion not in FUSION_MODES:
            raise ValueError(f"unknown fusion {fusion!r}; valid: {FUSION_MODES}")
        if channels % heads:
            raise ShapeError(f"channels {channels} not divisible by heads {heads}")
        self.channels = channels
        self.heads = heads
        self.fusion = fusion
        self.use_dwconv = use_dwconv

        def proj():
            if use_dwconv:
                return DepthwiseConv2d(channels, 3, padding=1, rng=rng)
            return Conv2d(channels, channels, 1, rng=rng)

        self.q_proj = proj()
        self.k_proj = proj()
        self.v_proj = proj()
        self.out_proj = Conv2d(channels, channels, 1, rng=rng)
        # safe start: a fresh block is a per-step identity in every mode, so
        # randomly mixed features never reach the decoder before training
        self.out_proj.weight.data[...] = 0.0
        if fusion == "learned":
            self.res_proj = Conv2d(channels, channels, 1, rng=rng)
            self.res_proj.weight.data[...] = np.eye(channels)[:, :, None, None]
            self.ff_expand = Conv2d(channels, channels * 2, 1, rng=rng)
            self.ff_reduce = Conv2d(channels * 2, channels, 1, rng=rng)
            self.ff_reduce.weight.data[...] = 0.0

    # -- core attention ---------------------------------------------------------

    def _tokens(self, x: Tensor) -> Tensor:
        """[B, C, H, W] -> [B, heads, N, head_dim] with N = H*W tokens."""
        B, C, H, W = x.shape
        hd = C // self.heads
        t = reshape(x, (B, self.heads, hd, H * W))
        return transpose(t, (0, 1, 3, 2))

    def attend(self, cur: Tensor, nxt: Tensor, counter=None) -> Tensor:
        """Attention term for one step: queries from cur, keys/values from nxt."""
        if cur.shape != nxt.shape:
            raise ShapeError(f"cur {cur.shape} and nxt {nxt.shape} differ")
        B, C, H, W = cur.shape
        hd = C // self.heads
        q = self._tokens(self.q_proj(cur, counter=counter, spike_input=True))
        k = self._tokens(self.k_proj(nxt, counter=counter, spike_input=True))
        v = self._tokens(self.v_proj(nxt, counter=counter, spike_input=True))
        scores = matmul(q, transpose(k, (0, 1, 3, 2))) * (1.0 / np.sqrt(hd))
        if counter is not None:
            N = H * W
            counter.count_matmul((B, self.heads, N, hd), (B, self.heads, hd, N))
            counter.count_matmul((B, self.heads, N, N), (B, self.heads, N, hd))
        weights = softmax(scores)
        mixed = matmul(weights, v)  # [B, heads, N, hd]
        mixed = transpose(mixed, (0, 1, 3, 2))
        mixed = reshape(mixed, (B, C, H, W))
        return self.out_proj(mixed, counter=counter)

    def fuse(self, att: Tensor, cur: Tensor, counter=None) -> Tensor:
        if self.fusion == "or":
            return or_fuse(att, cur)
        if self.fusion == "add":
            return att + cur
        x = att + self.res_proj(cur, counter=counter, spike_input=True)
        return x + self.ff_reduce(relu(self.ff_expand(x, counter=counter)), counter=counter)

    def forward(self, seq: Tensor, counter=None) -> Tensor:
        """[T, B, C, H, W] -> same shape; step t fused with attention over step t+1."""
        if seq.ndim != 5:
            raise ShapeError(f"expected [T, B, C, H, W], got ndim={seq.ndim}")
        T, B, C, H, W = seq.shape
        if C != self.channels:
            raise ShapeError(f"debias expects {self.channels} channels, got {C}")
        steps = [reshape(s, (B, C, H, W)) for s in split(seq, 1, axis=0)]
        outs = []
        for t in range(T):
            cur = steps[t]
            nxt = steps[t + 1] if t + 1 < T else steps[t]
            att = self.attend(cur, nxt, counter=counter)
            outs.append(self.fuse(att, cur, counter=counter))
        return stack(outs, axis=0)

    __call__ = forward
