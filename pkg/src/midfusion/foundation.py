"""Frozen one-stream foundation: patch embedding, encoder blocks and box head."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import Tensor, nn

from .config import FoundationConfig
from .tokens import Segments, ShapeError, TokenSeq, tokens_to_grid


class DimensionError(ShapeError):
    """Image size not a multiple of the patch size; ``axis`` is ``"H"`` or ``"W"``."""

    def __init__(self, axis: str, size: int, patch: int):
        self.axis = axis
        super().__init__(f"image {axis}={size} is not divisible by patch_size={patch}")


class Attention(nn.Module):
    def __init__(self, dim: int, num_heads: int):
        super().__init__()
        self.num_heads = num_heads
        self.scale = (dim // num_heads) ** -0.5
        self.qkv = nn.Linear(dim, dim * 3)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x: Tensor) -> Tensor:
        b, n, d = x.shape
        qkv = self.qkv(x).reshape(b, n, 3, self.num_heads, d // self.num_heads).permute(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]
        attn = (q @ k.transpose(-2, -1)) * self.scale
        attn = attn.softmax(dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(b, n, d)
        return self.proj(out)


class Mlp(nn.Module):
    def __init__(self, dim: int, hidden: int):
        super().__init__()
        self.fc1 = nn.Linear(dim, hidden)
        self.fc2 = nn.Linear(hidden, dim)

    def forward(self, x: Tensor) -> Tensor:
        return self.fc2(F.gelu(self.fc1(x)))


class Block(nn.Module):
    """Pre-norm transformer encoder block."""

    def __init__(self, dim: int, num_heads: int, hidden: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = Attention(dim, num_heads)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = Mlp(dim, hidden)

    def forward(self, x: Tensor) -> Tensor:
        x = x + self.attn(self.norm1(x))
        return x + self.mlp(self.norm2(x))


class Branch(nn.Module):
    def __init__(self, dim: int, hidden: int, out: int):
        super().__init__()
        self.fc1 = nn.Linear(dim, hidden)
        self.fc2 = nn.Linear(hidden, out)

    def forward(self, x: Tensor) -> Tensor:
        return self.fc2(F.gelu(self.fc1(x)))


@dataclass
class HeadOutput:
    """Decoded boxes ``[B, 4]`` as (x, y, w, h) in search pixels, plus raw maps.

    ``score_map`` is ``[B, h, w]`` in [0, 1]; ``offset`` and ``size`` are
    ``[B, 2, h, w]``, the offset in cell units and the size as a fraction of
    the search image.
    """

    boxes: Tensor
    score_map: Tensor
    offset: Tensor
    size: Tensor
    index: Tensor


class CenterHead(nn.Module):
    """Per-cell center score, sub-cell offset and box size.

    Decoding takes the first maximum of the score map in row-major order and
    places the box center at ``(cell + offset) * patch``.
    """

    def __init__(self, cfg: FoundationConfig):
        super().__init__()
        self.cfg = cfg
        d, h = cfg.embed_dim, cfg.head_hidden
        self.score = Branch(d, h, 1)
        self.offset = Branch(d, h, 2)
        self.size = Branch(d, h, 2)

    def forward(self, search: Tensor) -> HeadOutput:
        cfg = self.cfg
        gh, gw = cfg.search_grid
        if search.dim() != 3 or search.shape[1] != gh * gw:
            raise ShapeError(f"head expects [B, {gh * gw}, D] search tokens, got {tuple(search.shape)}")
        score = torch.sigmoid(tokens_to_grid(self.score(search), (gh, gw)))[:, 0]
        offset = torch.sigmoid(tokens_to_grid(self.offset(search), (gh, gw)))
        size = torch.sigmoid(tokens_to_grid(self.size(search), (gh, gw)))
        index = score.detach().flatten(1).argmax(dim=1)
        boxes = decode_boxes(index, offset, size, cfg)
        return HeadOutput(boxes, score, offset, size, index)


def decode_boxes(index: Tensor, offset: Tensor, size: Tensor, cfg: FoundationConfig) -> Tensor:
    gh, gw = cfg.search_grid
    hx, wx = cfg.search_size
    b = index.shape[0]
    rows, cols = index // gw, index % gw
    batch = torch.arange(b)
    off = offset[batch, :, rows, cols]
    wh = size[batch, :, rows, cols]
    cx = (cols.to(off.dtype) + off[:, 0]) * cfg.patch_size
    cy = (rows.to(off.dtype) + off[:, 1]) * cfg.patch_size
    w = wh[:, 0] * wx
    h = wh[:, 1] * hx
    x1 = (cx - w / 2).clamp(0, wx)
    y1 = (cy - h / 2).clamp(0, hx)
    x2 = (cx + w / 2).clamp(0, wx)
    y2 = (cy + h / 2).clamp(0, hx)
    return torch.stack([x1, y1, x2 - x1, y2 - y1], dim=1)


class Foundation(nn.Module):
    """The frozen one-stream tracker. All parameters have ``requires_grad=False``."""

    def __init__(self, cfg: FoundationConfig, seed: int = 0, init: bool = True):
        super().__init__()
        bad = cfg.problems()
        if bad:
            raise ValueError("; ".join(bad))
        self.cfg = cfg
        d = cfg.embed_dim
        self.patch_embed = nn.Conv2d(3, d, kernel_size=cfg.patch_size, stride=cfg.patch_size)
        self.pos_template = nn.Parameter(torch.zeros(cfg.num_template_tokens, d))
        self.pos_search = nn.Parameter(torch.zeros(cfg.num_search_tokens, d))
        self.blocks = nn.ModuleList(Block(d, cfg.num_heads, cfg.mlp_hidden) for _ in range(cfg.num_blocks))
        self.norm = nn.LayerNorm(d)
        self.head = CenterHead(cfg)
        if init:
            self.reset_parameters(seed)
        self.requires_grad_(False)

    @torch.no_grad()
    def reset_parameters(self, seed: int = 0) -> None:
        gen = torch.Generator().manual_seed(seed)
        for name, p in self.named_parameters():
            if name.endswith("bias"):
                p.zero_()
            elif "norm" in name:
                p.fill_(1.0)
            else:
                # LeCun-normal scale keeps activations O(1) at any embed_dim
                fan_in = p[0].numel() if p.dim() > 1 else p.shape[-1]
                std = fan_in ** -0.5
                p.normal_(0.0, std, generator=gen).clamp_(-2 * std, 2 * std)

    def embed(self, image: Tensor, role: str) -> TokenSeq:
        """Images ``[B, H, W, 3]`` (or ``[H, W, 3]``) -> tokens with positional codes."""
        cfg = self.cfg
        if image.dim() == 3:
            image = image.unsqueeze(0)
        if image.dim() != 4 or image.shape[-1] != 3:
            raise ShapeError(f"expected [B, H, W, 3] image, got {tuple(image.shape)}")
        _, h, w, _ = image.shape
        for axis, v in (("H", h), ("W", w)):
            if v % cfg.patch_size:
                raise DimensionError(axis, v, cfg.patch_size)
        grid = (h // cfg.patch_size, w // cfg.patch_size)
        if role == "template":
            pos, expected = self.pos_template, cfg.template_grid
        elif role == "search":
            pos, expected = self.pos_search, cfg.search_grid
        else:
            raise ValueError(f"role must be 'template' or 'search', got {role!r}")
        if grid != expected:
            raise ShapeError(f"{role} image {h}x{w} gives grid {grid}, config expects {expected}")
        x = self.patch_embed(image.permute(0, 3, 1, 2).to(self.pos_template.dtype))
        x = x.flatten(2).transpose(1, 2) + pos
        segs = Segments(0, grid, None) if role == "template" else Segments(0, None, grid)
        return TokenSeq(x, segs)

    def block(self, index: int, tokens: TokenSeq) -> TokenSeq:
        """Run encoder block ``index`` (1-based)."""
        if not 1 <= index <= self.cfg.num_blocks:
            raise IndexError(f"block index {index} outside 1..{self.cfg.num_blocks}")
        if tokens.dim != self.cfg.embed_dim:
            raise ShapeError(f"token dim {tokens.dim} != embed_dim {self.cfg.embed_dim}")
        return tokens.with_data(self.blocks[index - 1](tokens.data))

    def head_forward(self, search: Tensor | TokenSeq) -> HeadOutput:
        """Final norm + box head on exactly ``N_X`` search tokens."""
        if isinstance(search, TokenSeq):
            if search.segments.prompt or search.segments.template:
                raise ShapeError("head input must carry search tokens only")
            search = search.data
        return self.head(self.norm(search))

    def forward(self, template: Tensor, search: Tensor) -> HeadOutput:
        """Plain single-modality tracking, the foundation on its own."""
        z = self.embed(template, "template")
        x = self.embed(search, "search")
        tokens = TokenSeq(torch.cat([z.data, x.data], 1), Segments(0, z.segments.template_grid,
                                                                    x.segments.search_grid))
        for i in range(1, self.cfg.num_blocks + 1):
            tokens = self.block(i, tokens)
        return self.head_forward(tokens.search)


def checksum(module: nn.Module) -> str:
    """SHA-256 over the raw bytes of every parameter and buffer, in name order."""
    h = hashlib.sha256()
    for name, t in sorted(module.state_dict().items()):
        h.update(name.encode())
        h.update(t.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


def count(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


def gaussian_center_map(boxes: Tensor, cfg: FoundationConfig, sigma_factor: float = 1 / 6) -> Tensor:
    """Gaussian target map ``[B, h, w]`` peaking at the cell holding each box center."""
    gh, gw = cfg.search_grid
    cx = (boxes[:, 0] + boxes[:, 2] / 2) / cfg.patch_size
    cy = (boxes[:, 1] + boxes[:, 3] / 2) / cfg.patch_size
    ci = cx.floor().clamp(0, gw - 1)
    ri = cy.floor().clamp(0, gh - 1)
    w = boxes[:, 2] / cfg.patch_size
    h = boxes[:, 3] / cfg.patch_size
    sigma = (torch.sqrt(w * h) * sigma_factor).clamp(min=0.5)
    cols = torch.arange(gw, dtype=boxes.dtype)
    rows = torch.arange(gh, dtype=boxes.dtype)
    dx = (cols[None, None, :] - ci[:, None, None]) ** 2
    dy = (rows[None, :, None] - ri[:, None, None]) ** 2
    return torch.exp(-(dx + dy) / (2 * sigma[:, None, None] ** 2))
