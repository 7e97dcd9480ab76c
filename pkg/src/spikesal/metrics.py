"""Saliency evaluation metrics on numpy arrays.

Predictions are float maps in [0, 1]; ground truth is binary. All
functions are evaluation-only (no gradients). Differentiable loss
counterparts used during training live in the training module.

Threshold convention for F-measures: predictions are first quantized to
the 256-level gray lattice (floor(pred * 255)), and every threshold is a
lattice comparison q >= j for integer j in 1..255. The adaptive threshold
min(2 * mean(pred), 1) is mapped onto the same lattice, so the adaptive
F-measure can never exceed the maximum over the sweep.
"""
from __future__ import annotations

import numpy as np

__all__ = [
    "mae",
    "f_beta_from_counts",
    "f_beta_adaptive",
    "f_beta_max",
    "f_beta_curve",
    "s_measure",
    "psnr",
    "ssim_global",
    "pixel_ratio_analysis",
]

_EPS = float(np.spacing(1))
_BETA2 = 0.3
PSNR_CAP = 99.0


def _as_map(x, name: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got ndim={x.ndim}")
    return x


def _check_pair(pred, gt, binary_gt: bool = True) -> tuple[np.ndarray, np.ndarray]:
    pred = _as_map(pred, "pred")
    gt = _as_map(gt, "gt")
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs gt {gt.shape}")
    if pred.min() < -1e-12 or pred.max() > 1.0 + 1e-12:
        raise ValueError("pred values must lie in [0, 1]")
    if binary_gt and not np.isin(gt, (0.0, 1.0)).all():
        raise ValueError("gt must be binary (0/1)")
    return pred, gt


def mae(pred, gt) -> float:
    pred, gt = _check_pair(pred, gt, binary_gt=False)
    return float(np.abs(pred - gt).mean())


def _quantize(pred: np.ndarray) -> np.ndarray:
    return np.clip(np.floor(pred * 255.0), 0, 255).astype(np.int64)


def f_beta_from_counts(tp: float, fp: float, fn: float, beta2: float = _BETA2) -> float:
    """F_beta from confusion counts; every 0/0 resolves to 0."""
    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    recall = tp / (tp + fn) if tp + fn > 0 else 0.0
    denom = beta2 * precision + recall
    if denom == 0.0:
        return 0.0
    return (1.0 + beta2) * precision * recall / denom


def _f_at_level(q: np.ndarray, gt: np.ndarray, level: int) -> float:
    binary = q >= level
    tp = float(np.logical_and(binary, gt == 1.0).sum())
    fp = float(np.logical_and(binary, gt == 0.0).sum())
    fn = float(np.logical_and(~binary, gt == 1.0).sum())
    return f_beta_from_counts(tp, fp, fn)


def f_beta_adaptive(pred, gt) -> float:
    """F_beta at the adaptive threshold min(2 * mean(pred), 1), snapped up
    to the gray lattice (never below level 1)."""
    pred, gt = _check_pair(pred, gt)
    t = min(2.0 * float(pred.mean()), 1.0)
    level = int(np.clip(np.ceil(t * 255.0), 1, 255))
    return _f_at_level(_quantize(pred), gt, level)


def f_beta_curve(pred, gt) -> np.ndarray:
    """F_beta at every lattice threshold j/255, j = 1..255."""
    pred, gt = _check_pair(pred, gt)
    q = _quantize(pred)
    return np.array([_f_at_level(q, gt, j) for j in range(1, 256)])


def f_beta_max(pred, gt) -> float:
    return float(f_beta_curve(pred, gt).max())


def psnr(pred, ref, cap: float = PSNR_CAP) -> float:
    """Peak signal-to-noise ratio for maps on [0, 1], capped for identical
    inputs instead of returning infinity."""
    pred, ref = _check_pair(pred, ref, binary_gt=False)
    err = float(np.mean((pred - ref) ** 2))
    if err <= 0.0:
        return cap
    return min(-10.0 * np.log10(err), cap)


def ssim_global(pred, ref) -> float:
    """Structural similarity with a single global window over the whole
    map: population moments, constants K1 = 0.01, K2 = 0.03 on unit range."""
    pred, ref = _check_pair(pred, ref, binary_gt=False)
    c1 = 0.01 ** 2
    c2 = 0.03 ** 2
    mx, my = pred.mean(), ref.mean()
    vx, vy = pred.var(), ref.var()
    cov = ((pred - mx) * (ref - my)).mean()
    return float(
        ((2 * mx * my + c1) * (2 * cov + c2))
        / ((mx * mx + my * my + c1) * (vx + vy + c2))
    )


# -- structure measure ---------------------------------------------------------------


def _object_score(values: np.ndarray) -> float:
    if values.size == 0:
        return 0.0
    x = float(values.mean())
    sx = float(values.std(ddof=1)) if values.size > 1 else 0.0
    return 2.0 * x / (x * x + 1.0 + sx + _EPS)


def _s_object(pred: np.ndarray, gt: np.ndarray) -> float:
    fg_mask = gt == 1.0
    o_fg = _object_score(pred[fg_mask])
    o_bg = _object_score((1.0 - pred)[~fg_mask])
    u = float(gt.mean())
    return u * o_fg + (1.0 - u) * o_bg


def _centroid(gt: np.ndarray) -> tuple[int, int]:
    """Foreground centroid as 1-based (row, col) cut sizes, rounding half
    away from zero; image center when the foreground is empty."""
    rows, cols = gt.shape
    total = gt.sum()
    if total == 0:
        return int(np.floor(rows / 2.0 + 0.5)), int(np.floor(cols / 2.0 + 0.5))
    r_idx = np.arange(1, rows + 1, dtype=np.float64)[:, None]
    c_idx = np.arange(1, cols + 1, dtype=np.float64)[None, :]
    y = int(np.floor((gt * r_idx).sum() / total + 0.5))
    x = int(np.floor((gt * c_idx).sum() / total + 0.5))
    return y, x


def _region_ssim(p: np.ndarray, g: np.ndarray) -> float:
    n = p.size
    if n == 0:
        return 0.0
    x, y = float(p.mean()), float(g.mean())
    sx = float(((p - x) ** 2).sum()) / (n - 1 + _EPS)
    sy = float(((g - y) ** 2).sum()) / (n - 1 + _EPS)
    sxy = float(((p - x) * (g - y)).sum()) / (n - 1 + _EPS)
    alpha = 4.0 * x * y * sxy
    beta = (x * x + y * y) * (sx + sy)
    if alpha != 0.0:
        return alpha / (beta + _EPS)
    return 1.0 if beta == 0.0 else 0.0


def _s_region(pred: np.ndarray, gt: np.ndarray) -> float:
    rows, cols = gt.shape
    y, x = _centroid(gt)
    area = rows * cols
    w = [
        (y * x) / area,
        (y * (cols - x)) / area,
        ((rows - y) * x) / area,
    ]
    w.append(1.0 - w[0] - w[1] - w[2])
    quads = [
        (pred[:y, :x], gt[:y, :x]),
        (pred[:y, x:], gt[:y, x:]),
        (pred[y:, :x], gt[y:, :x]),
        (pred[y:, x:], gt[y:, x:]),
    ]
    return sum(wi * _region_ssim(p, g) for wi, (p, g) in zip(w, quads))


def s_measure(pred, gt, balance: float = 0.5) -> float:
    """Structure measure: balanced combination of object-level similarity
    (foreground/background mean-contrast) and region-level similarity
    (per-quadrant structural comparison around the foreground centroid).
    Degenerate ground truths score by plain intensity: empty foreground
    rewards dark predictions, full foreground rewards bright ones."""
    pred, gt = _check_pair(pred, gt)
    u = float(gt.mean())
    if u == 0.0:
        return 1.0 - float(pred.mean())
    if u == 1.0:
        return float(pred.mean())
    score = balance * _s_object(pred, gt) + (1.0 - balance) * _s_region(pred, gt)
    return max(score, 0.0)


def pixel_ratio_analysis(preds, gts, class_labels) -> dict[str, dict[str, float]]:
    """Per-class foreground pixel ratios: for each class label, the mean
    fraction of pixels predicted salient (at threshold 0.5) next to the
    ground-truth fraction. Exposes systematic over- or under-segmentation
    per scenario class."""
    preds = [np.asarray(p, dtype=np.float64) for p in preds]
    gts = [np.asarray(g, dtype=np.float64) for g in gts]
    if not len(preds) == len(gts) == len(class_labels):
        raise ValueError("preds, gts and class_labels must have equal length")
    out: dict[str, dict[str, list[float]]] = {}
    for p, g, label in zip(preds, gts, class_labels):
        slot = out.setdefault(label, {"pred": [], "gt": []})
        slot["pred"].append(float((p >= 0.5).mean()))
        slot["gt"].append(float((g >= 0.5).mean()))
    return {
        label: {
            "pred_ratio": float(np.mean(v["pred"])),
            "gt_ratio": float(np.mean(v["gt"])),
            "count": len(v["pred"]),
        }
        for label, v in sorted(out.items())
    }
