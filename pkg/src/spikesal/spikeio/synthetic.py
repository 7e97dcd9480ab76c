"""Deterministic synthetic luminance clips for desk-scale experiments.

Each sample is a textured static background plus one moving bright shape
(rectangle or disc). The per-tick ground-truth mask marks exactly the
shape's pixels, including any ticks where lighting hides it: recovering
the shape through degraded lighting is the point of the exercise.

Scenarios:
  constant-light    steady illumination.
  brightness-ramp   global luminance factor descends from 1.0 to a floor;
                    the floor holds over the final fifth of the clip, so a
                    floor of 0 yields zero spikes anywhere in those ticks.
  shadow-occlusion  a hard half-plane shadow (luminance 0) sweeps across
                    the frame, ending over the shape's center so late
                    ticks see roughly half the shape.

All randomness comes from the seeded generator; a (seed, size, count)
triple always produces identical clips.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["SCENARIOS", "SyntheticConfig", "SyntheticSample", "make_synthetic_dataset"]

SCENARIOS = ("constant-light", "brightness-ramp", "shadow-occlusion")


@dataclass
class SyntheticConfig:
    width: int = 32
    height: int = 32
    num_ticks: int = 40
    count: int = 64
    scenarios: tuple[str, ...] = SCENARIOS
    seed: int = 0
    flicker: float = 0.03  # per-tick global multiplicative luminance jitter
    ramp_floor: float = 0.0
    max_travel: float = 2.0  # total shape displacement over the clip, pixels


@dataclass
class SyntheticSample:
    name: str
    scenario: str
    frames: np.ndarray  # [T, H, W] float64 luminance in [0, 1]
    masks: np.ndarray  # [T, H, W] uint8 ground truth, 1 on the shape
    meta: dict = field(default_factory=dict)


def _smooth_texture(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    """Low-frequency texture in [-1, 1]: coarse noise, bilinearly enlarged."""
    ch, cw = max(2, h // 8), max(2, w // 8)
    coarse = rng.uniform(-1.0, 1.0, size=(ch, cw))
    ys = np.linspace(0, ch - 1, h)
    xs = np.linspace(0, cw - 1, w)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, ch - 1)
    x1 = np.minimum(x0 + 1, cw - 1)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    return (
        coarse[np.ix_(y0, x0)] * (1 - fy) * (1 - fx)
        + coarse[np.ix_(y0, x1)] * (1 - fy) * fx
        + coarse[np.ix_(y1, x0)] * fy * (1 - fx)
        + coarse[np.ix_(y1, x1)] * fy * fx
    )


def _shape_mask(kind: str, cy: float, cx: float, size: tuple[float, float], h: int, w: int) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w]
    if kind == "disc":
        r = size[0]
        return ((yy - cy) ** 2 + (xx - cx) ** 2 < r * r).astype(np.uint8)
    hh, hw = size
    return ((np.abs(yy - cy) < hh) & (np.abs(xx - cx) < hw)).astype(np.uint8)


def make_synthetic_dataset(cfg: SyntheticConfig) -> list[SyntheticSample]:
    for s in cfg.scenarios:
        if s not in SCENARIOS:
            raise ValueError(f"unknown scenario {s!r}; valid: {SCENARIOS}")
    rng = np.random.default_rng(cfg.seed)
    h, w, T = cfg.height, cfg.width, cfg.num_ticks
    samples: list[SyntheticSample] = []
    for i in range(cfg.count):
        scenario = cfg.scenarios[i % len(cfg.scenarios)]
        bg = 0.18 + 0.10 * rng.uniform() + 0.08 * _smooth_texture(rng, h, w)
        bg = np.clip(bg, 0.05, 0.45)

        kind = rng.choice(["disc", "rect"])
        if kind == "disc":
            size = (rng.uniform(h / 6.5, h / 4.5), 0.0)
        else:
            size = (rng.uniform(h / 8, h / 5), rng.uniform(w / 8, w / 5))
        lum = rng.uniform(0.65, 0.9)
        margin = max(size) + 2.0
        cy0 = rng.uniform(margin, h - margin)
        cx0 = rng.uniform(margin, w - margin)
        angle = rng.uniform(0, 2 * np.pi)
        travel = rng.uniform(0.5, cfg.max_travel)
        vy = travel * np.sin(angle) / max(T - 1, 1)
        vx = travel * np.cos(angle) / max(T - 1, 1)
        # keep the path inside the frame
        if not margin <= cy0 + vy * (T - 1) <= h - margin:
            vy = -vy
        if not margin <= cx0 + vx * (T - 1) <= w - margin:
            vx = -vx

        flick = 1.0 + cfg.flicker * rng.standard_normal(T)
        shadow_x1 = cx0 + vx * (T - 1) + rng.uniform(-max(size) / 2, max(size) / 2)
        ramp_len = 0.8 * (T - 1)

        frames = np.empty((T, h, w))
        masks = np.empty((T, h, w), dtype=np.uint8)
        for t in range(T):
            cy, cx = cy0 + vy * t, cx0 + vx * t
            mask = _shape_mask(kind, cy, cx, size, h, w)
            frame = np.where(mask, lum, bg)
            if scenario == "brightness-ramp":
                f = cfg.ramp_floor + (1.0 - cfg.ramp_floor) * max(0.0, 1.0 - t / ramp_len)
                frame = frame * f
            elif scenario == "shadow-occlusion":
                xb = -2.0 + (shadow_x1 + 2.0) * t / max(T - 1, 1)
                frame = np.where(np.arange(w)[None, :] < xb, 0.0, frame)
            frames[t] = np.clip(frame * flick[t], 0.0, 1.0)
            masks[t] = mask
        samples.append(
            SyntheticSample(
                name=f"sample_{i:03d}",
                scenario=scenario,
                frames=frames,
                masks=masks,
                meta={"kind": kind, "lum": lum, "travel": travel},
            )
        )
    return samples
