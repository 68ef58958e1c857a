"""Two-stage middle-fusion tracker: dual-stream stage 1, fusion, single-stream stage 2.

The functions take the bank and the frozen foundation explicitly and are
pure given their inputs. ``trace``, when given, collects ``(name, layer)``
for every prompter application so wiring can be audited.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import torch
from torch import Tensor, nn

from .foundation import Foundation, HeadOutput
from .prompters import PrompterBank, fep_forward, ip_forward, mfp_forward, uep_forward
from .tokens import Segments, ShapeError, TokenSeq

Trace = list | None


@dataclass(frozen=True)
class ModalFramePair:
    """Visible and thermal images of identical shape, ``[B, H, W, 3]`` or ``[H, W, 3]``."""

    visible: Tensor
    thermal: Tensor

    def __post_init__(self):
        if self.visible.shape != self.thermal.shape:
            raise ShapeError(f"visible {tuple(self.visible.shape)} and thermal "
                             f"{tuple(self.thermal.shape)} images differ in size")

    def swapped(self) -> "ModalFramePair":
        return ModalFramePair(self.thermal, self.visible)


def _batched(img: Tensor) -> Tensor:
    return img.unsqueeze(0) if img.dim() == 3 else img


def embed_modality(foundation: Foundation, template: Tensor, search: Tensor, prompt: Tensor | None) -> TokenSeq:
    """``[prompt; template; search]`` tokens for one modality."""
    z = foundation.embed(_batched(template), "template")
    x = foundation.embed(_batched(search), "search")
    b = z.data.shape[0]
    parts = [z.data, x.data]
    p = 0
    if prompt is not None and prompt.shape[0] > 0:
        parts.insert(0, prompt.to(z.data.dtype).unsqueeze(0).expand(b, -1, -1))
        p = prompt.shape[0]
    return TokenSeq(torch.cat(parts, dim=1), Segments(p, z.segments.template_grid, x.segments.search_grid))


def _note(trace: Trace, name: str, layer: int) -> None:
    if trace is not None:
        trace.append((name, layer))


def stage1_forward(bank: PrompterBank, foundation: Foundation, tokens_v: TokenSeq, tokens_t: TokenSeq,
                   trace: Trace = None) -> tuple[TokenSeq, TokenSeq]:
    """Blocks 1..N on both modalities with intra- and inter-modal prompting.

    Per block n: the visible block runs and gets its UEP delta; IP^n prompts
    the thermal template (previous-layer thermal, current visible); the
    thermal block runs and gets its UEP delta; IP^n then prompts the visible
    template that enters block n+1. The visible result therefore carries the
    last IP output, the thermal result is the block-N output.
    """
    cfg = bank.cfg
    if tokens_v.segments != tokens_t.segments:
        raise ShapeError(f"modal segments differ: {tokens_v.segments} vs {tokens_t.segments}")
    grid = tokens_v.segments.template_grid
    h_v, e_t = tokens_v, tokens_t
    for n in range(1, cfg.first_stage_blocks + 1):
        e_v = foundation.block(n, h_v)
        if str(n) in bank.uep_v:
            e_v = e_v.with_image(e_v.image + uep_forward(bank.uep_v[str(n)], h_v))
            _note(trace, "uep_v", n)
        h_t = e_t.with_template(ip_forward(bank.ip_v2t(n), e_t.template, e_v.template, grid))
        _note(trace, "ip_v2t", n)
        e_t = foundation.block(n, h_t)
        if str(n) in bank.uep_t:
            e_t = e_t.with_image(e_t.image + uep_forward(bank.uep_t[str(n)], h_t))
            _note(trace, "uep_t", n)
        h_v = e_v.with_template(ip_forward(bank.ip_to_visible(n), e_v.template, e_t.template, grid))
        _note(trace, "ip_t2v", n)
    return h_v, e_t


def fused_prompt(bank: PrompterBank) -> Tensor:
    return bank.visible_prompt + bank.thermal_prompt + bank.fusion_prompt


def middle_fuse(bank: PrompterBank, tokens_v: TokenSeq, tokens_t: TokenSeq, trace: Trace = None) -> TokenSeq:
    """MFP on the image tokens; the summed prompt tables are prepended."""
    fused = mfp_forward(bank.mfp, tokens_v, tokens_t)
    _note(trace, "mfp", bank.cfg.first_stage_blocks)
    prompt = fused_prompt(bank).to(fused.data.dtype)
    if prompt.shape[0] == 0:
        return fused
    return fused.with_prompt(prompt.unsqueeze(0).expand(fused.data.shape[0], -1, -1))


def stage2_forward(bank: PrompterBank, foundation: Foundation, fused: TokenSeq, trace: Trace = None) -> TokenSeq:
    """Blocks N+1..L, each followed by an FEP prompt on the image tokens.

    The first FEP reads the block input, later ones the previous FEP output.
    """
    cfg = bank.cfg
    h = fused
    prompt = None
    for k, m in enumerate(range(cfg.first_stage_blocks + 1, cfg.foundation.num_blocks + 1)):
        e = foundation.block(m, h)
        prompt_in = h.image if prompt is None else prompt
        prompt = fep_forward(bank.fep[k], prompt_in, e.image, e.segments)
        _note(trace, "fep", m)
        h = e.with_image(e.image + prompt)
    return h


@dataclass
class TrackOutput:
    boxes: Tensor
    score_map: Tensor
    head: HeadOutput


def track(bank: PrompterBank, foundation: Foundation, templates: ModalFramePair, searches: ModalFramePair,
          trace: Trace = None) -> TrackOutput:
    """Full tracker: embed, stage 1, fuse, stage 2, head on the search tokens."""
    tokens_v = embed_modality(foundation, templates.visible, searches.visible, bank.visible_prompt)
    tokens_t = embed_modality(foundation, templates.thermal, searches.thermal, bank.thermal_prompt)
    out_v, out_t = stage1_forward(bank, foundation, tokens_v, tokens_t, trace)
    fused = middle_fuse(bank, out_v, out_t, trace)
    final = stage2_forward(bank, foundation, fused, trace)
    head = foundation.head_forward(final.search)
    return TrackOutput(head.boxes, head.score_map, head)


def baseline_track(foundation: Foundation, templates: ModalFramePair, searches: ModalFramePair,
                   first_stage_blocks: int, prompt_tokens: int) -> TrackOutput:
    """Prompter-free middle fusion: independent modal stacks, mean fusion, plain stage 2.

    Zero prompt tokens still ride along so that token counts match the full
    tracker.
    """
    d = foundation.cfg.embed_dim
    dtype = foundation.pos_template.dtype
    zeros = torch.zeros(prompt_tokens, d, dtype=dtype)
    tv = embed_modality(foundation, templates.visible, searches.visible, zeros)
    tt = embed_modality(foundation, templates.thermal, searches.thermal, zeros)
    for n in range(1, first_stage_blocks + 1):
        tv = foundation.block(n, tv)
        tt = foundation.block(n, tt)
    fused = TokenSeq(0.5 * (tv.image + tt.image), tv.segments.image_only())
    if prompt_tokens:
        fused = fused.with_prompt(zeros.unsqueeze(0).expand(fused.data.shape[0], -1, -1))
    for m in range(first_stage_blocks + 1, foundation.cfg.num_blocks + 1):
        fused = foundation.block(m, fused)
    head = foundation.head_forward(fused.search)
    return TrackOutput(head.boxes, head.score_map, head)


class Tracker(nn.Module):
    """Bundles a frozen foundation and a trainable bank for training loops."""

    def __init__(self, foundation: Foundation, bank: PrompterBank):
        super().__init__()
        if foundation.cfg != bank.cfg.foundation:
            raise ValueError("foundation and bank were built for different foundation configs")
        self.foundation = foundation
        self.bank = bank

    def forward(self, templates: ModalFramePair, searches: ModalFramePair) -> TrackOutput:
        return track(self.bank, self.foundation, templates, searches)

    def trainable_parameters(self) -> Sequence[nn.Parameter]:
        return list(self.bank.parameters())
