"""Spike threshold nonlinearity with a surrogate backward pass.

The forward pass is a hard step: 1.0 strictly above threshold, 0.0 at or
below it. The true derivative is zero almost everywhere, so the backward
pass substitutes a smooth pseudo-derivative centered on the threshold.
This op is deliberately NOT finite-difference checkable; its backward is
tested against the closed-form pseudo-derivative instead.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, as_tensor

__all__ = ["SurrogateSpec", "heaviside"]


@dataclass(frozen=True)
class SurrogateSpec:
    """Pseudo-derivative used for the spike threshold backward pass.

    kind: "rectangular" (boxcar of half-width `width` around the threshold)
          or "arctan" (Cauchy-shaped bump with scale `width`).
    width: positive scale parameter. Both kinds integrate to one, so the
           surrogate is a widened stand-in for the Dirac derivative of the
           true step. Defaults: rectangular window, half-width 0.5, giving
           pseudo-derivative 1.0 at the threshold itself.
    """

    kind: str = "rectangular"
    width: float = 0.5

    def __post_init__(self):
        if self.kind not in ("rectangular", "arctan"):
            raise ValueError(f"unknown surrogate kind: {self.kind!r}")
        if not self.width > 0:
            raise ValueError(f"surrogate width must be positive, got {self.width}")

    def pseudo_derivative(self, x: np.ndarray) -> np.ndarray:
        """Surrogate derivative evaluated at distance x from the threshold."""
        x = np.asarray(x, dtype=np.float64)
        if self.kind == "rectangular":
            return np.where(np.abs(x) <= self.width, 1.0 / (2.0 * self.width), 0.0)
        return 1.0 / (np.pi * self.width * (1.0 + (x / self.width) ** 2))


def heaviside(u, threshold: float = 0.0, spec: SurrogateSpec | None = None) -> Tensor:
    """Binary spike: strictly 1.0 where u > threshold, else exactly 0.0.

    Backward: grad * spec.pseudo_derivative(u - threshold). With the
    rectangular default the gradient is exactly zero outside the window
    [threshold - width, threshold + width].
    """
    u = as_tensor(u)
    spec = spec or SurrogateSpec()
    out_data = (u.data > threshold).astype(np.float64)

    def bwd(g):
        return (g * spec.pseudo_derivative(u.data - threshold),)

    return Tensor._result(out_data, (u,), bwd, "heaviside")
