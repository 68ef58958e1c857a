"""Prompt-tuning: loss, learning-rate schedule and the optimizer loop.

Only the prompter bank is ever handed to the optimizer; the foundation's
parameters are frozen (``requires_grad=False``) and compared by checksum in
the tests.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import Tensor

from .config import FoundationConfig, LossWeights, TrainConfig
from .foundation import Foundation, gaussian_center_map
from .pipeline import ModalFramePair, track
from .prompters import PrompterBank
from .synthetic import SyntheticPair, stack_batch

log = logging.getLogger(__name__)


class InputError(ValueError):
    pass


class NumericError(FloatingPointError):
    pass


@dataclass
class LossParts:
    total: Tensor
    cls: Tensor
    giou: Tensor
    l1: Tensor

    def as_floats(self) -> dict[str, float]:
        return {k: float(getattr(self, k).detach()) for k in ("total", "cls", "giou", "l1")}


def box_iou_giou(a: Tensor, b: Tensor) -> tuple[Tensor, Tensor]:
    """IoU and generalized IoU of ``[..., 4]`` (x, y, w, h) boxes."""
    ax2, ay2 = a[..., 0] + a[..., 2], a[..., 1] + a[..., 3]
    bx2, by2 = b[..., 0] + b[..., 2], b[..., 1] + b[..., 3]
    iw = (torch.minimum(ax2, bx2) - torch.maximum(a[..., 0], b[..., 0])).clamp(min=0)
    ih = (torch.minimum(ay2, by2) - torch.maximum(a[..., 1], b[..., 1])).clamp(min=0)
    inter = iw * ih
    union = a[..., 2] * a[..., 3] + b[..., 2] * b[..., 3] - inter
    iou = inter / union.clamp(min=1e-12)
    ew = torch.maximum(ax2, bx2) - torch.minimum(a[..., 0], b[..., 0])
    eh = torch.maximum(ay2, by2) - torch.minimum(a[..., 1], b[..., 1])
    enclose = (ew * eh).clamp(min=1e-12)
    return iou, iou - (enclose - union) / enclose


def focal_loss(pred: Tensor, target: Tensor, alpha: float = 2.0, beta: float = 4.0) -> Tensor:
    """Penalty-reduced focal loss against a Gaussian heatmap peaking at 1."""
    pred = pred.clamp(1e-4, 1 - 1e-4)
    pos = target.eq(1).to(pred.dtype)
    neg = 1 - pos
    pos_term = torch.log(pred) * (1 - pred) ** alpha * pos
    neg_term = torch.log(1 - pred) * pred ** alpha * (1 - target) ** beta * neg
    num_pos = pos.sum().clamp(min=1)
    return -(pos_term.sum() + neg_term.sum()) / num_pos


def normalized_cxcywh(boxes: Tensor, cfg: FoundationConfig) -> Tensor:
    hx, wx = cfg.search_size
    cx = (boxes[..., 0] + boxes[..., 2] / 2) / wx
    cy = (boxes[..., 1] + boxes[..., 3] / 2) / hx
    return torch.stack([cx, cy, boxes[..., 2] / wx, boxes[..., 3] / hx], dim=-1)


def compute_loss(pred_box: Tensor, score_map: Tensor, gt_box: Tensor, weights: LossWeights,
                 cfg: FoundationConfig) -> LossParts:
    """``cls + lambda_giou * (1 - GIoU) + lambda_l1 * L1`` averaged over the batch.

    Boxes are ``[B, 4]`` (x, y, w, h) in search pixels; L1 is taken on
    (cx, cy, w, h) normalized by the search size.
    """
    if pred_box.dim() == 1:
        pred_box, gt_box, score_map = pred_box[None], gt_box[None], score_map[None]
    if bool((gt_box[:, 2] <= 0).any() or (gt_box[:, 3] <= 0).any()):
        raise InputError("ground-truth box has non-positive width or height")
    _, giou = box_iou_giou(pred_box, gt_box)
    giou_loss = (1 - giou).mean()
    l1 = (normalized_cxcywh(pred_box, cfg) - normalized_cxcywh(gt_box, cfg)).abs().mean()
    cls = focal_loss(score_map, gaussian_center_map(gt_box, cfg), weights.focal_alpha, weights.focal_beta)
    total = cls + weights.lambda_giou * giou_loss + weights.lambda_l1 * l1
    return LossParts(total, cls, giou_loss, l1)


def learning_rate(epoch: int, cfg: TrainConfig) -> float:
    """Step decay: the base rate, times ``decay_factor`` from ``decay_epoch`` on."""
    return cfg.learning_rate * (cfg.decay_factor if epoch >= cfg.decay_epoch else 1.0)


def epoch_of_step(step: int, cfg: TrainConfig) -> int:
    return (step * cfg.batch_size) // cfg.samples_per_epoch


def make_optimizer(bank: PrompterBank, cfg: TrainConfig) -> torch.optim.AdamW:
    return torch.optim.AdamW(bank.parameters(), lr=cfg.learning_rate, weight_decay=cfg.weight_decay)


def training_step(bank: PrompterBank, foundation: Foundation, batch: tuple[ModalFramePair, ModalFramePair, Tensor],
                  optimizer: torch.optim.Optimizer, cfg: TrainConfig, step: int = 0) -> LossParts:
    """One AdamW update of the bank; the returned losses are pre-update."""
    templates, searches, gt = batch
    lr = learning_rate(epoch_of_step(step, cfg), cfg)
    for group in optimizer.param_groups:
        group["lr"] = lr
    out = track(bank, foundation, templates, searches)
    parts = compute_loss(out.boxes, out.score_map, gt, cfg.loss, foundation.cfg)
    if not torch.isfinite(parts.total):
        raise NumericError(f"non-finite loss at step {step}: {parts.as_floats()}")
    optimizer.zero_grad(set_to_none=True)
    parts.total.backward()
    optimizer.step()
    return parts


@dataclass
class TrainResult:
    losses: list[dict[str, float]] = field(default_factory=list)

    @property
    def totals(self) -> list[float]:
        return [r["total"] for r in self.losses]

    def csv(self) -> str:
        lines = ["step,lr,total,cls,giou,l1"]
        for i, r in enumerate(self.losses):
            lines.append(f"{i},{r['lr']:.6g},{r['total']:.8f},{r['cls']:.8f},{r['giou']:.8f},{r['l1']:.8f}")
        return "\n".join(lines) + "\n"


def train(bank: PrompterBank, foundation: Foundation, data: list[SyntheticPair], cfg: TrainConfig,
          steps: int | None = None) -> TrainResult:
    """Run ``steps`` optimizer steps on batches sampled (seeded) from ``data``."""
    steps = cfg.total_steps if steps is None else steps
    rng = np.random.default_rng(cfg.seed)
    optimizer = make_optimizer(bank, cfg)
    dtype = next(bank.parameters()).dtype
    result = TrainResult()
    bs = min(cfg.batch_size, len(data))
    for step in range(steps):
        idx = rng.choice(len(data), size=bs, replace=False)
        batch = stack_batch([data[i] for i in idx], dtype)
        parts = training_step(bank, foundation, batch, optimizer, cfg, step)
        row = parts.as_floats()
        row["lr"] = optimizer.param_groups[0]["lr"]
        result.losses.append(row)
        if step % 50 == 0 or step == steps - 1:
            log.info("step %d loss %.5f (cls %.4f giou %.4f l1 %.4f)", step, row["total"], row["cls"],
                     row["giou"], row["l1"])
    return result


def evaluate_loss(bank: PrompterBank, foundation: Foundation, data: list[SyntheticPair], cfg: TrainConfig) -> float:
    """Mean total loss over ``data`` without updating anything."""
    dtype = next(bank.parameters()).dtype
    with torch.no_grad():
        templates, searches, gt = stack_batch(data, dtype)
        out = track(bank, foundation, templates, searches)
        total = compute_loss(out.boxes, out.score_map, gt, cfg.loss, foundation.cfg).total
    value = float(total)
    if not math.isfinite(value):
        raise NumericError("non-finite evaluation loss")
    return value
