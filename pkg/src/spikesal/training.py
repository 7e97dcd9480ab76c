"""Training and evaluation for the spiking saliency network.

Pipeline per sample: simulate a spike stream from the luminance clip,
cut it into fixed-length tick chunks, reconstruct one frame per chunk at
the chunk's center tick, and feed the last `time_steps` frames to the
network as its step sequence. Supervision is the mask at each chunk
center; evaluation compares the mean of the per-step sigmoid maps against
the mask at the center of the consumed tick window.

The saliency network and the critic are optimized alternately: the critic
descends its two-sided scoring loss with a unit-gradient-norm penalty,
then the network descends the joint loss

    total = alpha * (BCE + (1 - IoU) + (1 - SSIM)) + MSE - D_EM,

where D_EM is the mean critic potential of the predictions (the dual-form
transport gap, critic frozen). Replacing the adversarial term with a
direct histogram distance (ed / kl / js, added instead of subtracted)
covers the distance ablation; disabling global debias drops the term.
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, asdict

import numpy as np

from .autodiff import Module, Tensor, bce, mse, no_grad, reshape, save_arrays, load_arrays
from .energy import OpCounter, count_inference, energy_mj
from .metrics import (
    f_beta_adaptive,
    f_beta_max,
    mae,
    pixel_ratio_analysis,
    psnr,
    s_measure,
    ssim_global,
)
from .model import ModelConfig, SaliencyNet
from .spikeio import IntensityClip, simulate_spikes, tfi_reconstruct
from .transport import Critic, critic_adversarial_loss, distance_loss, orient_critic_head

__all__ = [
    "TrainConfig",
    "TrainingDiverged",
    "Adam",
    "prepare_sample",
    "joint_loss",
    "iou_soft",
    "ssim_tensor",
    "train",
    "evaluate",
    "energy_estimate",
    "MetricsReport",
    "save_checkpoint",
    "load_checkpoint",
    "build_model",
]

_EPS = 1e-7

# Orientation watchdog: flip the critic head only once a smoothed gap
# estimate is firmly negative, so single-batch noise cannot thrash the
# orientation while a truly mirrored critic is still caught within a few
# critic steps.
_GAP_EMA_DECAY = 0.9
_FLIP_TOL = 0.02


@dataclass
class TrainConfig:
    lr: float = 2e-4
    weight_decay: float = 2e-5
    batch_size: int = 2
    time_steps: int = 5
    alpha: float = 1.0
    penalty_coef: float = 10.0
    critic_ratio: int = 1
    epochs: int = 10
    seed: int = 0
    input_size: int = 32
    theta: float = 2.0
    ticks_per_step: int = 8
    base_channels: int = 8
    heads: int = 4
    fusion: str = "learned"
    use_dwconv: bool = True
    global_debias: bool = True
    distance: str = "em"
    surrogate: str = "rectangular"

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.time_steps < 1:
            raise ValueError("time_steps must be >= 1")
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if self.distance not in ("em", "ed", "kl", "js"):
            raise ValueError(f"unknown distance {self.distance!r}")


class TrainingDiverged(RuntimeError):
    """Raised when a loss turns non-finite; the message names the epoch,
    the phase (critic or generator) and the offending term values."""


class Adam(object):
    """Adam with L2 weight decay folded into the gradient."""

    def __init__(self, params, lr: float, weight_decay: float = 0.0,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            g = p.grad + self.weight_decay * p.data
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * (g * g)
            m_hat = self.m[i] / b1c
            v_hat = self.v[i] / b2c
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def reset_state(self, param) -> None:
        """Clear the moment estimates of one parameter (used after a
        discontinuous parameter-space jump such as a critic head flip)."""
        for i, p in enumerate(self.params):
            if p is param:
                self.m[i][...] = 0.0
                self.v[i][...] = 0.0


# -- data preparation ------------------------------------------------------------------


def prepare_sample(sample, cfg: TrainConfig):
    """One sample -> (steps [T, 1, H, W], step_masks [T, 1, H, W],
    eval_gt [H, W]). The network consumes the LAST `time_steps` chunks of
    the tick range, so the single-step setting sees only the newest data."""
    frames = np.asarray(sample.frames, dtype=np.float64)
    masks = np.asarray(sample.masks)
    num_ticks = frames.shape[0]
    chunk = cfg.ticks_per_step
    total_chunks = num_ticks // chunk
    if cfg.time_steps > total_chunks:
        raise ValueError(
            f"time_steps={cfg.time_steps} needs {cfg.time_steps * chunk} ticks, "
            f"clip has {num_ticks}")
    stream = simulate_spikes(IntensityClip(frames), cfg.theta)
    first = total_chunks - cfg.time_steps
    steps, step_masks = [], []
    for c in range(first, total_chunks):
        center = c * chunk + chunk // 2
        frame = tfi_reconstruct(stream, center) / 255.0
        steps.append(frame[None])
        step_masks.append(masks[center].astype(np.float64)[None])
    window_center = (first * chunk + total_chunks * chunk) // 2
    eval_gt = masks[window_center].astype(np.float64)
    return np.stack(steps), np.stack(step_masks), eval_gt


def _prepare_all(samples, cfg: TrainConfig):
    return [prepare_sample(s, cfg) for s in samples]


def _batch(prepared, idx):
    steps = np.stack([prepared[i][0] for i in idx], axis=1)
    gts = np.stack([prepared[i][1] for i in idx], axis=1)
    return steps, gts


# -- differentiable loss pieces ---------------------------------------------------------


def iou_soft(pred: Tensor, gt: Tensor) -> Tensor:
    """Soft intersection-over-union averaged over maps; empty-vs-empty
    scores 1 through the epsilon."""
    n = pred.shape[0]
    p = reshape(pred, (n, -1))
    g = reshape(gt, (n, -1))
    inter = (p * g).sum(axis=1)
    union = p.sum(axis=1) + g.sum(axis=1) - inter
    return ((inter + _EPS) / (union + _EPS)).mean()


def ssim_tensor(pred: Tensor, gt: Tensor) -> Tensor:
    """Differentiable twin of the evaluation SSIM: one global window per
    map, population moments, averaged over maps."""
    c1, c2 = 0.01 ** 2, 0.03 ** 2
    n = pred.shape[0]
    p = reshape(pred, (n, -1))
    g = reshape(gt, (n, -1))
    mp = p.mean(axis=1, keepdims=True)
    mg = g.mean(axis=1, keepdims=True)
    dp = p - mp
    dg = g - mg
    vp = (dp * dp).mean(axis=1)
    vg = (dg * dg).mean(axis=1)
    cov = (dp * dg).mean(axis=1)
    mp0 = reshape(mp, (n,))
    mg0 = reshape(mg, (n,))
    num = (mp0 * mg0 * 2.0 + c1) * (cov * 2.0 + c2)
    den = (mp0 * mp0 + mg0 * mg0 + c1) * (vp + vg + c2)
    return (num / den).mean()


def _flatten_maps(x: Tensor) -> Tensor:
    t, b = x.shape[0], x.shape[1]
    return reshape(x, (t * b,) + tuple(x.shape[2:]))


def joint_loss(pred: Tensor, gt, source, critic: Critic | None, cfg: TrainConfig):
    """Joint objective on per-step sigmoid maps [T, B, 1, H, W].

    Returns (total, terms); terms always satisfies
    total = alpha * l_original + l_mse - d_em exactly (for direct-distance
    training d_em is the negated distance)."""
    gt = gt if isinstance(gt, Tensor) else Tensor(np.asarray(gt, dtype=np.float64))
    if gt.data.min() < 0.0 or gt.data.max() > 1.0:
        raise ValueError("gt values must lie in [0, 1]")
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs gt {gt.shape}")

    pred_maps = _flatten_maps(pred)
    gt_maps = _flatten_maps(gt)

    l_bce = bce(pred, gt)
    l_iou = 1.0 - iou_soft(pred_maps, gt_maps)
    l_ssim = 1.0 - ssim_tensor(pred_maps, gt_maps)
    l_original = l_bce + l_iou + l_ssim
    l_mse = mse(pred, gt)

    if not cfg.global_debias:
        total = cfg.alpha * l_original + l_mse
        d_em_val = 0.0
    elif cfg.distance == "em":
        if critic is None:
            raise ValueError("adversarial training needs a critic")
        with critic.frozen():
            d_em = critic.score(pred_maps).mean()
        total = cfg.alpha * l_original + l_mse - d_em
        d_em_val = float(d_em.data)
    else:
        dist = distance_loss(cfg.distance, pred_maps, gt_maps)
        total = cfg.alpha * l_original + l_mse + dist
        d_em_val = -float(dist.data)

    terms = {
        "total": float(total.data),
        "l_original": float(l_original.data),
        "l_bce": float(l_bce.data),
        "l_iou": float(l_iou.data),
        "l_ssim": float(l_ssim.data),
        "l_mse": float(l_mse.data),
        "d_em": d_em_val,
    }
    return total, terms


# -- model/checkpoint helpers -----------------------------------------------------------


def build_model(cfg: TrainConfig) -> SaliencyNet:
    from .autodiff import SurrogateSpec
    from .snn import LIFConfig

    mcfg = ModelConfig(
        base_channels=cfg.base_channels,
        heads=cfg.heads,
        fusion=cfg.fusion,
        use_dwconv=cfg.use_dwconv,
        lif=LIFConfig(surrogate=SurrogateSpec(kind=cfg.surrogate)),
    )
    return SaliencyNet(mcfg, rng=np.random.default_rng(cfg.seed))


def _state_with_prefix(module: Module, prefix: str) -> dict:
    return {prefix + k: v for k, v in module.state_dict().items()}


def save_checkpoint(path: str, model: Module, critic: Module | None = None) -> None:
    state = _state_with_prefix(model, "model.")
    if critic is not None:
        state.update(_state_with_prefix(critic, "critic."))
    save_arrays(path, state)


def load_checkpoint(path: str, model: Module, critic: Module | None = None) -> None:
    state = load_arrays(path)
    model.load_state_dict({k[len("model."):]: v for k, v in state.items()
                           if k.startswith("model.")})
    if critic is not None:
        critic_state = {k[len("critic."):]: v for k, v in state.items()
                        if k.startswith("critic.")}
        if critic_state:
            critic.load_state_dict(critic_state)


# -- training loop ----------------------------------------------------------------------


def _check_finite(value: float, epoch: int, phase: str, terms: dict) -> None:
    if not math.isfinite(value):
        raise TrainingDiverged(
            f"non-finite loss at epoch {epoch}, {phase} step: terms={terms}")


def train(model, critic, dataset, cfg: TrainConfig, out_dir: str | None = None):
    """Alternating optimization over `dataset` (train split = all but the
    last quarter, which is held out for validation). Returns
    (model, critic, logs) with one log entry per epoch."""
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    if model is None:
        model = build_model(cfg)
    needs_critic = cfg.global_debias and cfg.distance == "em"
    if critic is None and needs_critic:
        critic = Critic(rng=np.random.default_rng(cfg.seed + 1))

    n_val = max(1, len(dataset) // 4) if len(dataset) > 1 else 0
    train_samples = dataset[: len(dataset) - n_val]
    val_samples = dataset[len(dataset) - n_val:]
    prepared = _prepare_all(train_samples, cfg)

    g_opt = Adam([p for _, p in model.named_parameters()], cfg.lr, cfg.weight_decay)
    # low beta1 / beta2 on the critic: heavy momentum oscillates against a
    # moving generator (standard for gradient-penalty critics)
    c_opt = (Adam([p for _, p in critic.named_parameters()], cfg.lr, cfg.weight_decay,
                  beta1=0.5, beta2=0.9)
             if needs_critic else None)

    master = np.random.default_rng(cfg.seed)
    gap_ema = 0.0
    logs: list[dict] = []
    for epoch in range(cfg.epochs):
        model.train()
        order = master.permutation(len(prepared))
        epoch_terms: list[dict] = []
        critic_terms: list[dict] = []
        epoch_flips = 0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            steps, gts = _batch(prepared, idx)
            x = Tensor(steps)

            if needs_critic:
                with no_grad():
                    pred_data = model.saliency(x).data
                flat_pred = pred_data.reshape((-1,) + pred_data.shape[2:])
                flat_gt = gts.reshape((-1,) + gts.shape[2:])
                for _ in range(cfg.critic_ratio):
                    c_loss, c_info = critic_adversarial_loss(
                        flat_gt, flat_pred, critic,
                        penalty_coef=cfg.penalty_coef, rng=master)
                    _check_finite(float(c_loss.data), epoch, "critic",
                                  {**c_info, "loss": float(c_loss.data)})
                    c_opt.zero_grad()
                    c_loss.backward()
                    c_opt.step()
                    gap_ema = (_GAP_EMA_DECAY * gap_ema
                               + (1.0 - _GAP_EMA_DECAY) * c_info["em_gap"])
                    if orient_critic_head(critic, gap_ema, tol=_FLIP_TOL):
                        c_opt.reset_state(critic.head.weight)
                        c_opt.reset_state(critic.head.bias)
                        gap_ema = -gap_ema
                        epoch_flips += 1
                    critic_terms.append({**c_info, "loss": float(c_loss.data)})

            pred = model.saliency(x)
            total, terms = joint_loss(pred, gts, steps, critic, cfg)
            _check_finite(terms["total"], epoch, "generator", terms)
            g_opt.zero_grad()
            total.backward()
            g_opt.step()
            epoch_terms.append(terms)

        entry = {"epoch": epoch}
        for key in epoch_terms[0]:
            entry[key] = float(np.mean([t[key] for t in epoch_terms]))
        if critic_terms:
            entry["critic_loss"] = float(np.mean([t["loss"] for t in critic_terms]))
            entry["critic_em_gap"] = float(np.mean([t["em_gap"] for t in critic_terms]))
            entry["critic_penalty"] = float(np.mean([t["penalty"] for t in critic_terms]))
            entry["critic_flips"] = epoch_flips
        if val_samples:
            report = evaluate(model, val_samples, cfg)
            entry["val_mae"] = report.mae
            entry["val_max_f_beta"] = report.max_f_beta
        logs.append(entry)
        if out_dir is not None:
            with open(os.path.join(out_dir, "train_log.jsonl"), "a") as fh:
                fh.write(json.dumps(entry) + "\n")

    if out_dir is not None:
        save_checkpoint(os.path.join(out_dir, "checkpoint.tnsr"), model, critic)
    return model, critic, logs


# -- evaluation -------------------------------------------------------------------------


@dataclass
class MetricsReport:
    mae: float
    mean_f_beta: float
    max_f_beta: float
    s_measure: float
    psnr: float
    ssim: float
    energy_mj: float
    per_class_pixel_ratio: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def _predict(model, steps: np.ndarray, counter=None) -> np.ndarray:
    """Mean over time steps of the per-step sigmoid maps, for one sample."""
    with no_grad():
        maps = model.saliency(Tensor(steps[:, None]), counter=counter)
    return maps.data.mean(axis=0)[0, 0]


def evaluate(model, dataset, cfg: TrainConfig) -> MetricsReport:
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    missing = [getattr(s, "name", str(i)) for i, s in enumerate(dataset)
               if getattr(s, "masks", None) is None]
    if missing:
        raise ValueError(f"samples missing ground-truth masks: {missing}")

    was_training = model.training
    model.eval()
    try:
        preds, gts, labels = [], [], []
        counter = OpCounter()
        for sample in dataset:
            steps, _, eval_gt = prepare_sample(sample, cfg)
            preds.append(_predict(model, steps, counter=counter))
            gts.append(eval_gt)
            labels.append(getattr(sample, "scenario", "all"))
        rows = [
            (mae(p, g), f_beta_adaptive(p, g), f_beta_max(p, g),
             s_measure(p, g), psnr(p, g), ssim_global(p, g))
            for p, g in zip(preds, gts)
        ]
        agg = [float(np.mean(col)) for col in zip(*rows)]
        ratios = pixel_ratio_analysis(preds, gts, labels)
        per_class = [{"class": k, **v} for k, v in ratios.items()]
        energy = energy_mj(counter.ac, counter.mac) / len(dataset)
    finally:
        if was_training:
            model.train()
    return MetricsReport(*agg, energy_mj=energy, per_class_pixel_ratio=per_class)


def energy_estimate(model, sample, cfg: TrainConfig) -> dict:
    """Operation counts and energy for one sample's inference at the
    configured number of time steps."""
    steps, _, _ = prepare_sample(sample, cfg)
    return count_inference(model, steps[:, None])
