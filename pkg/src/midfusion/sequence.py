"""On-disk RGB-T sequences and the frame-by-frame tracking loop.

Sequence layout::

    <seq>/visible/     frame images, sorted by file name
    <seq>/infrared/    same count
    <seq>/visible.txt  one x,y,w,h line per frame
    <seq>/infrared.txt optional thermal ground truth
    <seq>/attributes.txt  optional 0/1 flags
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np
import torch
from PIL import Image

from .config import RunConfig
from .evalkit.attributes import SchemaError
from .evalkit.io import ATTRIBUTE_FILE, THERMAL_GT, VISIBLE_GT, DataError, read_attributes, read_boxes
from .evalkit.metrics import SequenceRecord
from .foundation import Foundation
from .pipeline import ModalFramePair, track
from .prompters import PrompterBank

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff"}


class IngestError(DataError):
    pass


def _frames(d: Path) -> list[Path]:
    return sorted(p for p in d.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def load_image(path: Path) -> np.ndarray:
    """RGB float32 ``[H, W, 3]`` in [0, 1]; grayscale thermal frames are replicated."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32)
    return arr / 255.0


@dataclass(frozen=True)
class SequenceData:
    name: str
    visible_frames: tuple[Path, ...]
    thermal_frames: tuple[Path, ...]
    gt_visible: np.ndarray
    gt_thermal: np.ndarray | None
    attributes: tuple[int, ...] | None
    schema: str

    def __len__(self) -> int:
        return len(self.visible_frames)

    def frames(self) -> Iterator[tuple[np.ndarray, np.ndarray]]:
        for v, t in zip(self.visible_frames, self.thermal_frames):
            yield load_image(v), load_image(t)

    def record(self, pred: np.ndarray) -> SequenceRecord:
        return SequenceRecord(self.name, np.asarray(pred, dtype=np.float64), self.gt_visible, self.gt_thermal,
                              self.attributes, self.schema)


def ingest_sequence(directory: str | Path, schema: str = "lasher") -> SequenceData:
    d = Path(directory)
    problems = []
    vis_dir, th_dir = d / "visible", d / "infrared"
    for sub in (vis_dir, th_dir):
        if not sub.is_dir():
            problems.append(f"missing modality directory {sub}")
    if not (d / VISIBLE_GT).exists():
        problems.append(f"missing ground truth {d / VISIBLE_GT}")
    if problems:
        raise IngestError(f"{d.name}: " + "; ".join(problems))
    vis, th = _frames(vis_dir), _frames(th_dir)
    gt_v = read_boxes(d / VISIBLE_GT)
    gt_t = read_boxes(d / THERMAL_GT) if (d / THERMAL_GT).exists() else None
    counts = {"visible": len(vis), "thermal": len(th), "visible_gt": len(gt_v)}
    if gt_t is not None:
        counts["thermal_gt"] = len(gt_t)
    if len(set(counts.values())) != 1:
        raise IngestError(f"{d.name}: frame count mismatch " + " ".join(f"{k}={v}" for k, v in counts.items()))
    if not vis:
        raise IngestError(f"{d.name}: no frames")
    attrs = None
    if (d / ATTRIBUTE_FILE).exists():
        try:
            attrs = read_attributes(d / ATTRIBUTE_FILE, schema)
        except SchemaError as exc:
            raise SchemaError(f"{d.name}: {exc}") from exc
    return SequenceData(d.name, tuple(vis), tuple(th), gt_v, gt_t, attrs, schema)


# ---------------------------------------------------------------------------
# cropping


def crop_resize(image: np.ndarray, center: tuple[float, float], side: float, out_size: tuple[int, int]
                ) -> np.ndarray:
    """Bilinear square crop of ``side`` pixels around ``center``, resized to ``out_size`` (H, W).

    Outside the image the per-channel mean is used.
    """
    h, w = image.shape[:2]
    oh, ow = out_size
    cx, cy = center
    xs = cx - side / 2 + (np.arange(ow) + 0.5) * side / ow - 0.5
    ys = cy - side / 2 + (np.arange(oh) + 0.5) * side / oh - 0.5
    x0 = np.floor(xs).astype(int)
    y0 = np.floor(ys).astype(int)
    fx = (xs - x0)[None, :, None]
    fy = (ys - y0)[:, None, None]
    pad_value = image.reshape(-1, image.shape[2]).mean(axis=0)

    def take(yy, xx):
        inside = ((yy >= 0) & (yy < h))[:, None] & ((xx >= 0) & (xx < w))[None, :]
        vals = image[np.clip(yy, 0, h - 1)[:, None], np.clip(xx, 0, w - 1)[None, :]]
        return np.where(inside[..., None], vals, pad_value)

    top = take(y0, x0) * (1 - fx) + take(y0, x0 + 1) * fx
    bottom = take(y0 + 1, x0) * (1 - fx) + take(y0 + 1, x0 + 1) * fx
    return (top * (1 - fy) + bottom * fy).astype(np.float32)


def crop_side(box: np.ndarray, factor: float) -> float:
    return max(math.sqrt(max(box[2], 1.0) * max(box[3], 1.0)) * factor, 1.0)


def center_of(box: np.ndarray) -> tuple[float, float]:
    return (float(box[0] + box[2] / 2), float(box[1] + box[3] / 2))


def clip_box(box: np.ndarray, width: int, height: int) -> np.ndarray:
    """Intersect ``box`` with the frame; a box entirely outside collapses to zero size."""
    x1, y1 = np.clip(box[0], 0, width), np.clip(box[1], 0, height)
    x2, y2 = np.clip(box[0] + box[2], 0, width), np.clip(box[1] + box[3], 0, height)
    return np.array([x1, y1, x2 - x1, y2 - y1])


def track_sequence(bank: PrompterBank, foundation: Foundation, seq: SequenceData, cfg: RunConfig) -> np.ndarray:
    """Boxes for every frame; frame 0 is the initialization box."""
    fcfg = foundation.cfg
    dtype = foundation.pos_template.dtype
    init = seq.gt_visible[0]
    if not (init[2] > 0 and init[3] > 0):
        if seq.gt_thermal is not None and seq.gt_thermal[0][2] > 0 and seq.gt_thermal[0][3] > 0:
            init = seq.gt_thermal[0]
        else:
            raise DataError(f"{seq.name}: target absent in the first frame")
    frames = seq.frames()
    v0, t0 = next(frames)
    zc, zs = center_of(init), crop_side(init, cfg.template_factor)
    as_t = (lambda a: torch.from_numpy(a).to(dtype))
    templates = ModalFramePair(as_t(crop_resize(v0, zc, zs, fcfg.template_size)),
                               as_t(crop_resize(t0, zc, zs, fcfg.template_size)))
    boxes = [np.asarray(init, dtype=np.float64)]
    state = boxes[0]
    hx, wx = fcfg.search_size
    with torch.no_grad():
        for v, t in frames:
            c, side = center_of(state), crop_side(state, cfg.search_factor)
            searches = ModalFramePair(as_t(crop_resize(v, c, side, fcfg.search_size)),
                                      as_t(crop_resize(t, c, side, fcfg.search_size)))
            out = track(bank, foundation, templates, searches).boxes[0].double().numpy()
            sx, sy = side / wx, side / hx
            x0, y0 = c[0] - side / 2, c[1] - side / 2
            box = clip_box(np.array([x0 + out[0] * sx, y0 + out[1] * sy, out[2] * sx, out[3] * sy]),
                           v.shape[1], v.shape[0])
            boxes.append(box)
            if box[2] > 1 and box[3] > 1:
                state = box
    return np.stack(boxes)
