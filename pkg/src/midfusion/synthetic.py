"""Synthetic RGB-T template/search pairs for desk-scale training and tests.

The target is a textured rectangle in the visible image and a warm blob in
the thermal image. A share of the pairs has one modality degraded: the
visible search washed out to near-constant brightness, or the thermal
search flat, so fusion weights have something to learn from.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .config import FoundationConfig
from .pipeline import ModalFramePair

KINDS = ("normal", "visible_degraded", "thermal_flat")
KIND_PROBS = (0.6, 0.2, 0.2)


@dataclass(frozen=True)
class SyntheticPair:
    template_v: np.ndarray
    template_t: np.ndarray
    search_v: np.ndarray
    search_t: np.ndarray
    gt: np.ndarray  # (x, y, w, h) in search pixels
    kind: str


def _background(rng: np.random.Generator, h: int, w: int, channels: int) -> np.ndarray:
    # coarse noise upsampled by repetition, plus fine noise
    coarse = rng.uniform(0.1, 0.6, size=(h // 8 + 1, w // 8 + 1, channels))
    img = np.repeat(np.repeat(coarse, 8, axis=0), 8, axis=1)[:h, :w]
    return img + rng.normal(0, 0.03, size=(h, w, channels))


def _paint_visible(img: np.ndarray, box: np.ndarray, color: np.ndarray, phase: float) -> None:
    x, y, w, h = box
    x0, y0 = int(round(x)), int(round(y))
    x1, y1 = int(round(x + w)), int(round(y + h))
    yy, xx = np.mgrid[y0:y1, x0:x1]
    stripes = 0.15 * np.sin((xx - x0) * 0.8 + phase)[..., None]
    img[y0:y1, x0:x1] = color[None, None, :] + stripes


def _paint_thermal(img: np.ndarray, box: np.ndarray, heat: float) -> None:
    x, y, w, h = box
    hh, ww = img.shape[:2]
    yy, xx = np.mgrid[0:hh, 0:ww]
    cx, cy = x + w / 2, y + h / 2
    blob = np.exp(-(((xx + 0.5 - cx) / (w / 2)) ** 2 + ((yy + 0.5 - cy) / (h / 2)) ** 2) * 1.5)
    img += heat * blob[..., None]


def _render(rng: np.random.Generator, size: tuple[int, int], box: np.ndarray, color: np.ndarray,
            phase: float, heat: float) -> tuple[np.ndarray, np.ndarray]:
    h, w = size
    vis = _background(rng, h, w, 3)
    _paint_visible(vis, box, color, phase)
    th = _background(rng, h, w, 1) * 0.5
    _paint_thermal(th, box, heat)
    return np.clip(vis, 0, 1), np.clip(np.repeat(th, 3, axis=2), 0, 1)


def generate_synthetic(seed: int, n_pairs: int, cfg: FoundationConfig) -> list[SyntheticPair]:
    """``n_pairs`` deterministic pairs; every ground-truth box lies inside the search image."""
    if n_pairs < 1:
        raise ValueError("n_pairs must be >= 1")
    rng = np.random.default_rng(seed)
    hz, wz = cfg.template_size
    hx, wx = cfg.search_size
    out = []
    for _ in range(n_pairs):
        kind = KINDS[rng.choice(len(KINDS), p=KIND_PROBS)]
        color = rng.uniform(0.5, 1.0, size=3)
        phase = rng.uniform(0, 2 * np.pi)
        heat = rng.uniform(0.6, 0.9)
        bw = rng.uniform(0.15, 0.4) * wx
        bh = rng.uniform(0.15, 0.4) * hx
        bx = rng.uniform(0, wx - bw)
        by = rng.uniform(0, hx - bh)
        gt = np.array([bx, by, bw, bh])
        # template: target centered, filling half of each side
        scale = min(wz / (2 * bw), hz / (2 * bh))
        tw, th_ = bw * scale, bh * scale
        tbox = np.array([(wz - tw) / 2, (hz - th_) / 2, tw, th_])
        tv, tt = _render(rng, (hz, wz), tbox, color, phase, heat)
        sv, st = _render(rng, (hx, wx), gt, color, phase, heat)
        if kind == "visible_degraded":
            sv = np.clip(0.9 + 0.05 * (sv - sv.mean()), 0, 1)
        elif kind == "thermal_flat":
            st = np.clip(0.5 + 0.05 * (st - st.mean()), 0, 1)
        out.append(SyntheticPair(tv.astype(np.float32), tt.astype(np.float32), sv.astype(np.float32),
                                 st.astype(np.float32), gt.astype(np.float32), kind))
    return out


def stack_batch(pairs: list[SyntheticPair], dtype: torch.dtype = torch.float32
                ) -> tuple[ModalFramePair, ModalFramePair, torch.Tensor]:
    def t(name: str) -> torch.Tensor:
        return torch.from_numpy(np.stack([getattr(p, name) for p in pairs])).to(dtype)

    return (ModalFramePair(t("template_v"), t("template_t")), ModalFramePair(t("search_v"), t("search_t")),
            t("gt"))


def write_toy_benchmark(root: str | Path, n_sequences: int = 4, n_frames: int = 6, seed: int = 0,
                        frame_size: tuple[int, int] = (120, 160), schema: str = "lasher") -> Path:
    """Write a small on-disk RGB-T benchmark and return its manifest path.

    Each sequence has PNG frames for both modalities, visible and thermal
    ground truth (the thermal box slightly shifted, as with imperfect
    registration), and attribute flags. ``oracle_results/`` holds result
    files equal to the visible ground truth.
    """
    from PIL import Image

    from .evalkit.attributes import SCHEMAS
    from .evalkit.io import write_boxes, write_manifest

    root = Path(root)
    rng = np.random.default_rng(seed)
    h, w = frame_size
    names = SCHEMAS[schema]
    entries = []
    oracle = root / "oracle_results"
    oracle.mkdir(parents=True, exist_ok=True)
    for s in range(n_sequences):
        name = f"seq{s:03d}"
        d = root / name
        (d / "visible").mkdir(parents=True, exist_ok=True)
        (d / "infrared").mkdir(parents=True, exist_ok=True)
        color = rng.uniform(0.5, 1.0, size=3)
        phase = rng.uniform(0, 2 * np.pi)
        heat = rng.uniform(0.6, 0.9)
        bw, bh = rng.uniform(18, 32), rng.uniform(18, 32)
        x, y = rng.uniform(10, w - bw - 10), rng.uniform(10, h - bh - 10)
        vx, vy = rng.uniform(-3, 3), rng.uniform(-3, 3)
        gt_v, gt_t = [], []
        for f in range(n_frames):
            x = float(np.clip(x + vx, 0, w - bw))
            y = float(np.clip(y + vy, 0, h - bh))
            box = np.array([x, y, bw, bh])
            vis, th = _render(rng, (h, w), box, color, phase, heat)
            Image.fromarray((vis * 255).round().astype(np.uint8)).save(d / "visible" / f"{f:05d}.png")
            Image.fromarray((th[..., 0] * 255).round().astype(np.uint8)).save(d / "infrared" / f"{f:05d}.png")
            gt_v.append(np.round(box, 2))
            gt_t.append(np.round(box + np.array([1.0, -1.0, 0.0, 0.0]), 2))
        write_boxes(d / "visible.txt", gt_v)
        write_boxes(d / "infrared.txt", gt_t)
        write_boxes(oracle / f"{name}.txt", gt_v)
        flags = (rng.uniform(size=len(names)) < 0.25).astype(int)
        flags[0] = int(not flags[1:].any())
        (d / "attributes.txt").write_text(" ".join(str(v) for v in flags) + "\n", encoding="utf-8")
        entries.append((name, ["visible.txt", "infrared.txt"]))
    manifest = root / "manifest.txt"
    write_manifest(manifest, entries, schema)
    return manifest
