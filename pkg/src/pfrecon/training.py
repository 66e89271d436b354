"""Supervised training of the unrolled reconstruction variants.

The per-step pipeline: draw a repetition subset, normalize, maybe flip
along the readout axis, retrospectively PF-sample, reconstruct, compare
magnitude averages. The loss is an L1 term plus a weighted multi-scale
edge term that penalizes blur harder than plain L1 does. Phase never
contributes to the loss.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
import yaml

from .core import forward, ifft2c, make_pf_mask
from .metrics import psnr
from .network import (
    AGGREGATIONS,
    STRATEGIES,
    UnrolledNet,
    replicate_base,
    save_checkpoint,
)

__all__ = [
    "TrainConfig",
    "LossBreakdown",
    "TrainingDiverged",
    "normalize_set",
    "augment",
    "sample_repetition_subset",
    "magnitude_average",
    "loss",
    "loss_terms",
    "train",
    "train_two_stage",
]


@dataclass(frozen=True)
class TrainConfig:
    pff: str = "5/8"
    strategy: str = "recurrent"
    aggregation: str = "max"
    iters: int = 5
    epochs: int = 20
    learning_rate: float = 5e-4
    adam_betas: tuple[float, float] = (0.9, 0.999)
    loss_perceptual_weight: float = 0.5
    repetition_fraction: float = 1.0 / 3.0
    flip_probability: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if self.aggregation not in AGGREGATIONS:
            raise ValueError(f"unknown aggregation {self.aggregation!r}")
        if self.iters < 1:
            raise ValueError("iters must be at least 1")
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        # 0 is allowed so a no-op optimization run stays expressible
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if not 0 < self.repetition_fraction <= 1:
            raise ValueError("repetition_fraction must lie in (0, 1]")
        if self.loss_perceptual_weight < 0:
            raise ValueError("loss_perceptual_weight must be non-negative")
        if not 0 <= self.flip_probability <= 1:
            raise ValueError("flip_probability must lie in [0, 1]")
        object.__setattr__(self, "adam_betas", tuple(self.adam_betas))

    @classmethod
    def from_file(cls, path) -> "TrainConfig":
        """Load from YAML or JSON; unknown keys are rejected."""
        path = Path(path)
        with open(path) as f:
            if path.suffix == ".json":
                raw = json.load(f)
            else:
                raw = yaml.safe_load(f)
        if not isinstance(raw, dict):
            raise ValueError(f"{path} does not hold a mapping")
        known = set(cls.__dataclass_fields__)
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**raw)


class TrainingDiverged(RuntimeError):
    pass


def _images(entry) -> np.ndarray:
    """Ground-truth complex images (B, H, W) from a RepetitionSet or array."""
    if hasattr(entry, "samples"):
        return ifft2c(entry)
    arr = np.asarray(entry)
    if arr.ndim != 3:
        raise ValueError("expected a (B, H, W) complex image stack")
    return arr


def normalize_set(imgs: np.ndarray) -> tuple[np.ndarray, float]:
    """Scale a repetition stack by the 98th percentile of the pooled magnitudes."""
    imgs = np.asarray(imgs)
    scale = float(np.percentile(np.abs(imgs), 98.0))
    if scale <= 0:
        raise ValueError("degenerate normalization scale: set is (almost) all zero")
    return imgs / scale, scale


def augment(imgs: np.ndarray, flip_probability: float,
            rng: np.random.Generator) -> np.ndarray:
    """Mirror the whole stack along the readout axis with probability p.

    The flip is consistent across repetitions and is applied to images
    before any retrospective k-space sampling; flipping the phase-encode
    axis would scramble which lines count as acquired.
    """
    if rng.random() < flip_probability:
        return np.ascontiguousarray(imgs[..., ::-1, :])
    return imgs


def sample_repetition_subset(imgs: np.ndarray, fraction: float,
                             rng: np.random.Generator) -> np.ndarray:
    """Uniform subset without replacement; size round(fraction*B), min 1."""
    imgs = np.asarray(imgs)
    b = imgs.shape[0]
    if b < 1:
        raise ValueError("empty repetition stack")
    n = max(1, int(math.floor(fraction * b + 0.5)))
    return imgs[rng.choice(b, size=n, replace=False)]


def magnitude_average(x) -> np.ndarray:
    x = np.asarray(getattr(x, "samples", x))
    if x.ndim != 3:
        raise ValueError("expected a (B, H, W) stack")
    return np.abs(x).mean(axis=0)


@dataclass(frozen=True)
class LossBreakdown:
    l1_term: float
    perceptual_term: float
    total: float


_SOBEL_X = torch.tensor(
    [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]]
).view(1, 1, 3, 3) / 8.0
_SOBEL_Y = _SOBEL_X.transpose(2, 3)
_BINOMIAL = torch.tensor([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0
_PYRAMID_KERNEL = (_BINOMIAL[:, None] * _BINOMIAL[None, :]).view(1, 1, 5, 5)


def _sobel_magnitude(x: torch.Tensor) -> torch.Tensor:
    p = F.pad(x, (1, 1, 1, 1), mode="reflect")
    gx = F.conv2d(p, _SOBEL_X.to(x.dtype))
    gy = F.conv2d(p, _SOBEL_Y.to(x.dtype))
    return torch.sqrt(gx * gx + gy * gy + 1e-12)


def _halve(x: torch.Tensor) -> torch.Tensor:
    # binomial smoothing before decimation; the anti-aliasing matters,
    # a bare 2x2 mean keeps enough pixel noise alive to rival true
    # structure at the coarse scales
    p = F.pad(x, (2, 2, 2, 2), mode="reflect")
    return F.conv2d(p, _PYRAMID_KERNEL.to(x.dtype), stride=2)


def loss_terms(pred: torch.Tensor, gt: torch.Tensor,
               perceptual_weight: float):
    """Differentiable loss pieces; returns (l1, perceptual, total) tensors.

    The perceptual term averages the L1 distance between Sobel gradient
    magnitude maps at scales 1, 1/2 and 1/4 of an image pyramid.
    """
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(gt.shape)}")
    h, w = pred.shape[-2:]
    p = pred.reshape(-1, 1, h, w)
    g = gt.reshape(-1, 1, h, w)
    l1 = (p - g).abs().mean()
    scale_losses = []
    for _ in range(3):
        scale_losses.append(
            (_sobel_magnitude(p) - _sobel_magnitude(g)).abs().mean()
        )
        p = _halve(p)
        g = _halve(g)
    perceptual = torch.stack(scale_losses).mean()
    return l1, perceptual, l1 + perceptual_weight * perceptual


def loss(pred, gt, perceptual_weight: float = 0.5) -> LossBreakdown:
    """Loss between two real magnitude-average images."""
    pred_t = torch.as_tensor(np.asarray(pred, dtype=np.float64))
    gt_t = torch.as_tensor(np.asarray(gt, dtype=np.float64))
    l1, perc, total = loss_terms(pred_t, gt_t, perceptual_weight)
    return LossBreakdown(l1.item(), perc.item(), total.item())


def _validate(net, val_entries, mask, mask_t) -> float:
    """Mean PSNR of magnitude averages over held-out slices, full sets."""
    scores = []
    with torch.no_grad():
        for imgs in val_entries:
            imgs, _ = normalize_set(imgs)
            y = forward(imgs, mask)
            y_t = torch.from_numpy(y.samples).to(torch.complex64)
            pred = net(y_t, mask_t).abs().mean(dim=0).numpy()
            gt = magnitude_average(imgs)
            scores.append(psnr(gt, pred, data_range=float(gt.max())))
    return float(np.mean(scores))


def train(
    dataset,
    config: TrainConfig,
    *,
    val_dataset=None,
    net: UnrolledNet | None = None,
    log_path=None,
    checkpoint_path=None,
) -> tuple[UnrolledNet, list[dict]]:
    """Optimize an unrolled net; returns (best-validation net, epoch log).

    Each epoch visits every training slice once in random order. The
    logged records are also appended, one JSON object per line, to
    log_path when given. Model selection keeps the parameters with the
    best validation PSNR; when checkpoint_path is given every
    improvement is written there. Deterministic for a fixed seed and
    thread configuration. A non-finite loss aborts.
    """
    entries = [_images(d) for d in dataset]
    if not entries:
        raise ValueError("empty training dataset")
    if val_dataset is not None:
        val_entries = [_images(d) for d in val_dataset]
    elif len(entries) >= 5:
        n_val = max(1, len(entries) // 10)
        val_entries = entries[-n_val:]
        entries = entries[:-n_val]
    else:
        val_entries = []

    h, w = entries[0].shape[-2:]
    mask = make_pf_mask(w, config.pff)
    mask_t = torch.from_numpy(mask.array())
    torch.manual_seed(config.seed)
    rng = np.random.default_rng(config.seed)
    if net is None:
        net = UnrolledNet(config.strategy, iters=config.iters,
                          aggregation=config.aggregation)
    opt = torch.optim.Adam(net.parameters(), lr=config.learning_rate,
                           betas=config.adam_betas)

    records: list[dict] = []
    best_psnr = -math.inf
    best_state = None
    global_step = 0
    log_file = open(log_path, "a") if log_path is not None else None
    try:
        for epoch in range(config.epochs):
            sums = np.zeros(3)
            order = rng.permutation(len(entries))
            for idx in order:
                sub = sample_repetition_subset(
                    entries[idx], config.repetition_fraction, rng
                )
                sub, _ = normalize_set(sub)
                sub = augment(sub, config.flip_probability, rng)
                y = forward(sub, mask)
                y_t = torch.from_numpy(y.samples).to(torch.complex64)
                out = net(y_t, mask_t)
                pred_avg = out.abs().mean(dim=0)
                gt_avg = torch.from_numpy(
                    magnitude_average(sub).astype(np.float32)
                )
                l1, perc, total = loss_terms(
                    pred_avg, gt_avg, config.loss_perceptual_weight
                )
                if not bool(torch.isfinite(total)):
                    raise TrainingDiverged(
                        f"non-finite loss at epoch {epoch} step {global_step}: "
                        f"l1={l1.item()} perceptual={perc.item()}"
                    )
                opt.zero_grad()
                total.backward()
                opt.step()
                sums += (l1.item(), perc.item(), total.item())
                global_step += 1
            means = sums / len(order)
            val = _validate(net, val_entries, mask, mask_t) if val_entries else None
            rec = {
                "epoch": epoch,
                "step": global_step,
                "l1": means[0],
                "perceptual": means[1],
                "total": means[2],
                "val_psnr": val,
            }
            records.append(rec)
            if log_file is not None:
                log_file.write(json.dumps(rec) + "\n")
                log_file.flush()
            if val is not None and val > best_psnr:
                best_psnr = val
                best_state = copy.deepcopy(net.state_dict())
                if checkpoint_path is not None:
                    save_checkpoint(net, checkpoint_path, pff=str(config.pff))
    finally:
        if log_file is not None:
            log_file.close()
    if best_state is not None:
        net.load_state_dict(best_state)
    elif checkpoint_path is not None:
        save_checkpoint(net, checkpoint_path, pff=str(config.pff))
    return net, records


def train_two_stage(
    dataset,
    config: TrainConfig,
    *,
    base_epochs: int = 50,
    finetune_epochs: int = 15,
    base_lr: float = 5e-4,
    finetune_lr: float = 1e-4,
    strategies=STRATEGIES,
    val_dataset=None,
    log_dir=None,
    checkpoint_dir=None,
) -> tuple[dict[str, UnrolledNet], dict[str, list[dict]]]:
    """Pre-train single-iteration bases, replicate, fine-tune each strategy.

    One residual-CNN base seeds both weight_shared and cascaded; the
    recurrent strategy is seeded from its own single-iteration run.
    """
    log_dir = Path(log_dir) if log_dir is not None else None
    checkpoint_dir = Path(checkpoint_dir) if checkpoint_dir is not None else None

    def _paths(name):
        lp = log_dir / f"{name}.jsonl" if log_dir else None
        cp = checkpoint_dir / f"{name}.ckpt" if checkpoint_dir else None
        return lp, cp

    bases: dict[str, UnrolledNet] = {}
    logs: dict[str, list[dict]] = {}
    base_of = {s: ("recurrent" if s == "recurrent" else "weight_shared")
               for s in strategies}
    for family in sorted(set(base_of.values())):
        cfg = replace(config, strategy=family, iters=1,
                      epochs=base_epochs, learning_rate=base_lr)
        lp, cp = _paths(f"base_{family}")
        bases[family], logs[f"base_{family}"] = train(
            dataset, cfg, val_dataset=val_dataset, log_path=lp,
            checkpoint_path=cp,
        )
    nets: dict[str, UnrolledNet] = {}
    for strat in strategies:
        seeded = replicate_base(bases[base_of[strat]], strat, config.iters)
        cfg = replace(config, strategy=strat,
                      epochs=finetune_epochs, learning_rate=finetune_lr)
        lp, cp = _paths(strat)
        nets[strat], logs[strat] = train(
            dataset, cfg, val_dataset=val_dataset, net=seeded,
            log_path=lp, checkpoint_path=cp,
        )
    return nets, logs
