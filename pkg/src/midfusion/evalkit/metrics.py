"""Precision, normalized precision and success curves, their max-fused
variants, and attribute-wise breakdowns.

Curves pool frames over all sequences. Frames whose ground truth is absent
(zero or non-positive width/height) are left out of every denominator; the
number of frames used is stored with each curve.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from ..config import EvalConfig
from . import kernels
from .attributes import SCHEMAS, SchemaError, check_flags


class EmptyEvaluationError(ValueError):
    pass


@dataclass(frozen=True)
class BoundingBox:
    x: float
    y: float
    w: float
    h: float

    @property
    def absent(self) -> bool:
        return not (self.w > 0 and self.h > 0)

    @property
    def center(self) -> tuple[float, float]:
        return (self.x + self.w / 2, self.y + self.h / 2)

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.w, self.h], dtype=np.float64)


def iou(a: BoundingBox, b: BoundingBox) -> float:
    iw = min(a.x + a.w, b.x + b.w) - max(a.x, b.x)
    ih = min(a.y + a.h, b.y + b.h) - max(a.y, b.y)
    inter = max(iw, 0.0) * max(ih, 0.0)
    union = max(a.w, 0.0) * max(a.h, 0.0) + max(b.w, 0.0) * max(b.h, 0.0) - inter
    return min(inter / union, 1.0) if union > 0 else 0.0


def center_error(pred: BoundingBox, gt: BoundingBox) -> float | None:
    """Center distance in pixels, ``None`` when the target is absent."""
    if gt.absent:
        return None
    (px, py), (gx, gy) = pred.center, gt.center
    return math.hypot(px - gx, py - gy)


def norm_center_error(pred: BoundingBox, gt: BoundingBox) -> float | None:
    """Center offset scaled by the ground-truth size, ``None`` when absent."""
    if gt.absent:
        return None
    (px, py), (gx, gy) = pred.center, gt.center
    return math.hypot((px - gx) / gt.w, (py - gy) / gt.h)


@dataclass(frozen=True)
class SequenceRecord:
    name: str
    pred: np.ndarray
    gt_visible: np.ndarray
    gt_thermal: np.ndarray | None = None
    attributes: tuple[int, ...] | None = None
    schema: str = "lasher"

    def __post_init__(self):
        n = len(self.pred)
        if len(self.gt_visible) != n or (self.gt_thermal is not None and len(self.gt_thermal) != n):
            lens = [n, len(self.gt_visible)] + ([len(self.gt_thermal)] if self.gt_thermal is not None else [])
            raise ValueError(f"{self.name}: per-frame lengths differ {lens}")
        if self.schema not in SCHEMAS:
            raise SchemaError(f"unknown schema {self.schema!r}")
        if self.attributes is not None:
            object.__setattr__(self, "attributes", check_flags(self.attributes, self.schema))

    def __len__(self) -> int:
        return len(self.pred)


@dataclass(frozen=True)
class MetricCurve:
    name: str
    thresholds: np.ndarray
    values: np.ndarray
    representative: float
    frames: int

    def __post_init__(self):
        if len(self.thresholds) != len(self.values):
            raise ValueError("thresholds and values differ in length")

    def is_monotone(self) -> bool:
        d = np.diff(self.values)
        if self.name in ("SR", "MSR"):
            return bool(np.all(d <= 0))
        return bool(np.all(d >= 0))


def grid(maximum: float, step: float) -> np.ndarray:
    """``0, step, ..., maximum`` with exact endpoints."""
    return np.linspace(0.0, maximum, int(round(maximum / step)) + 1)


def precision_grid(cfg: EvalConfig) -> np.ndarray:
    return grid(cfg.precision_max, cfg.precision_step)


def norm_precision_grid(cfg: EvalConfig) -> np.ndarray:
    return grid(cfg.norm_precision_max, cfg.norm_precision_step)


def success_grid(cfg: EvalConfig) -> np.ndarray:
    return grid(1.0, cfg.success_step)


@dataclass
class FrameTable:
    """Per-frame scores of every valid frame, pooled over sequences."""

    center: np.ndarray
    norm: np.ndarray
    iou: np.ndarray
    fallback: list[str] = field(default_factory=list)

    @property
    def frames(self) -> int:
        return len(self.center)


def frame_table(records: Iterable[SequenceRecord], max_fusion: bool = False) -> FrameTable:
    """Scores against the visible GT, or the per-frame best of both GTs.

    With ``max_fusion`` the visible GT decides which frames count; the thermal
    GT is consulted wherever it is present. Records without a thermal GT fall
    back to the visible one and are listed in ``fallback``.
    """
    centers, norms, ious, fallback = [], [], [], []
    for rec in records:
        c, nm, io, valid = kernels.frame_metrics(rec.pred, rec.gt_visible)
        if max_fusion:
            if rec.gt_thermal is None:
                fallback.append(rec.name)
            else:
                c2, nm2, io2, valid2 = kernels.frame_metrics(rec.pred, rec.gt_thermal)
                c = np.where(valid2, np.minimum(c, c2), c)
                nm = np.where(valid2, np.minimum(nm, nm2), nm)
                io = np.where(valid2, np.maximum(io, io2), io)
        centers.append(c[valid])
        norms.append(nm[valid])
        ious.append(io[valid])
    cat = (lambda xs: np.concatenate(xs) if xs else np.empty(0))
    return FrameTable(cat(centers), cat(norms), cat(ious), fallback)


def _require(table: FrameTable) -> int:
    if table.frames == 0:
        raise EmptyEvaluationError("no valid frames to evaluate")
    return table.frames


def _precision(name: str, errors: np.ndarray, thresholds: np.ndarray, at: float) -> MetricCurve:
    n = len(errors)
    values = kernels.count_le(errors, thresholds) / n
    rep = float(kernels.count_le(errors, np.array([at]))[0] / n)
    return MetricCurve(name, thresholds, values, rep, n)


def _success(name: str, overlaps: np.ndarray, thresholds: np.ndarray) -> MetricCurve:
    n = len(overlaps)
    values = kernels.count_gt(overlaps, thresholds) / n
    return MetricCurve(name, thresholds, values, float(np.mean(values)), n)


def precision_curve(records: Sequence[SequenceRecord], cfg: EvalConfig = EvalConfig(),
                    max_fusion: bool = False) -> MetricCurve:
    t = frame_table(records, max_fusion)
    _require(t)
    return _precision("MPR" if max_fusion else "PR", t.center, precision_grid(cfg), cfg.precision_at)


def norm_precision_curve(records: Sequence[SequenceRecord], cfg: EvalConfig = EvalConfig(),
                         max_fusion: bool = False) -> MetricCurve:
    t = frame_table(records, max_fusion)
    _require(t)
    return _precision("MNPR" if max_fusion else "NPR", t.norm, norm_precision_grid(cfg), cfg.norm_precision_at)


def success_curve(records: Sequence[SequenceRecord], cfg: EvalConfig = EvalConfig(),
                  max_fusion: bool = False) -> MetricCurve:
    t = frame_table(records, max_fusion)
    _require(t)
    return _success("MSR" if max_fusion else "SR", t.iou, success_grid(cfg))


@dataclass
class Evaluation:
    curves: dict[str, MetricCurve]
    warnings: list[str] = field(default_factory=list)


def max_fuse(records: Sequence[SequenceRecord], cfg: EvalConfig = EvalConfig()) -> Evaluation:
    """MPR and MSR curves; sequences lacking a thermal GT are scored on the visible one."""
    t = frame_table(records, max_fusion=True)
    _require(t)
    curves = {"MPR": _precision("MPR", t.center, precision_grid(cfg), cfg.precision_at),
              "MSR": _success("MSR", t.iou, success_grid(cfg))}
    warnings = [f"no thermal ground truth for {name}; MPR/MSR fall back to PR/SR" for name in t.fallback]
    return Evaluation(curves, warnings)


def evaluate(records: Sequence[SequenceRecord], cfg: EvalConfig = EvalConfig()) -> Evaluation:
    """PR, NPR, SR (visible GT, or max-fused if ``cfg.max_fusion``) plus MPR and MSR."""
    t = frame_table(records, cfg.max_fusion)
    _require(t)
    curves = {"PR": _precision("PR", t.center, precision_grid(cfg), cfg.precision_at),
              "NPR": _precision("NPR", t.norm, norm_precision_grid(cfg), cfg.norm_precision_at),
              "SR": _success("SR", t.iou, success_grid(cfg))}
    fused = max_fuse(records, cfg)
    curves.update(fused.curves)
    return Evaluation(curves, fused.warnings)


def attribute_breakdown(records: Sequence[SequenceRecord], schema: str = "lasher",
                        cfg: EvalConfig = EvalConfig()) -> dict[str, Evaluation | None]:
    """Metrics per attribute over the sequences flagged with it; ``None`` when no sequence is."""
    if schema not in SCHEMAS:
        raise SchemaError(f"unknown schema {schema!r}")
    names = SCHEMAS[schema]
    for rec in records:
        if rec.attributes is None:
            raise SchemaError(f"{rec.name}: no attribute flags")
        if rec.schema != schema or len(rec.attributes) != len(names):
            raise SchemaError(f"{rec.name}: {len(rec.attributes)} flags under {rec.schema!r}, "
                              f"expected {len(names)} for {schema!r}")
    out: dict[str, Evaluation | None] = {}
    for i, attr in enumerate(names):
        subset = [r for r in records if r.attributes[i]]
        if not subset:
            out[attr] = None
            continue
        try:
            out[attr] = evaluate(subset, cfg)
        except EmptyEvaluationError:
            out[attr] = None
    return out
