"""Token sequences split into (prompt | template | search) segments."""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Sequence

import torch
from torch import Tensor


class ShapeError(ValueError):
    pass


@dataclass(frozen=True)
class Segments:
    """Token counts per segment plus the grid shapes of the image segments."""

    prompt: int
    template_grid: tuple[int, int] | None
    search_grid: tuple[int, int] | None

    @property
    def template(self) -> int:
        return 0 if self.template_grid is None else self.template_grid[0] * self.template_grid[1]

    @property
    def search(self) -> int:
        return 0 if self.search_grid is None else self.search_grid[0] * self.search_grid[1]

    @property
    def total(self) -> int:
        return self.prompt + self.template + self.search

    @property
    def bounds(self) -> dict[str, tuple[int, int]]:
        a = self.prompt
        b = a + self.template
        return {"prompt": (0, a), "template": (a, b), "search": (b, b + self.search)}

    @property
    def grids(self) -> list[tuple[int, int]]:
        return [g for g in (self.template_grid, self.search_grid) if g is not None]

    def image_only(self) -> "Segments":
        return replace(self, prompt=0)


@dataclass(frozen=True)
class TokenSeq:
    """``data`` is ``[B, N, D]``; ``segments`` says which rows are which."""

    data: Tensor
    segments: Segments

    def __post_init__(self):
        if self.data.dim() != 3:
            raise ShapeError(f"token data must be [B, N, D], got {tuple(self.data.shape)}")
        if self.data.shape[1] != self.segments.total:
            raise ShapeError(f"token count {self.data.shape[1]} != segment total {self.segments.total} "
                             f"({self.segments})")

    @property
    def dim(self) -> int:
        return self.data.shape[-1]

    def _slice(self, name: str) -> Tensor:
        a, b = self.segments.bounds[name]
        return self.data[:, a:b]

    @property
    def prompt(self) -> Tensor:
        return self._slice("prompt")

    @property
    def template(self) -> Tensor:
        return self._slice("template")

    @property
    def search(self) -> Tensor:
        return self._slice("search")

    @property
    def image(self) -> Tensor:
        """Template and search tokens, prompt tokens excluded."""
        return self.data[:, self.segments.prompt:]

    def with_data(self, data: Tensor) -> "TokenSeq":
        return TokenSeq(data, self.segments)

    def with_image(self, image: Tensor) -> "TokenSeq":
        return TokenSeq(torch.cat([self.prompt, image], dim=1), self.segments)

    def with_template(self, template: Tensor) -> "TokenSeq":
        return TokenSeq(torch.cat([self.prompt, template, self.search], dim=1), self.segments)

    def with_prompt(self, prompt: Tensor) -> "TokenSeq":
        segs = replace(self.segments, prompt=prompt.shape[1])
        return TokenSeq(torch.cat([prompt, self.image], dim=1), segs)


def concat(prompt: Tensor | None, template: TokenSeq | None, search: TokenSeq | None) -> TokenSeq:
    parts = [t for t in (prompt,) if t is not None and t.shape[1] > 0]
    tg = sg = None
    if template is not None:
        parts.append(template.data)
        tg = template.segments.template_grid
    if search is not None:
        parts.append(search.data)
        sg = search.segments.search_grid
    p = 0 if prompt is None else prompt.shape[1]
    return TokenSeq(torch.cat(parts, dim=1), Segments(p, tg, sg))


def tokens_to_grid(tokens: Tensor, grid: tuple[int, int]) -> Tensor:
    """``[B, h*w, C]`` -> ``[B, C, h, w]`` (row-major token order)."""
    b, n, c = tokens.shape
    h, w = grid
    if n != h * w:
        raise ShapeError(f"{n} tokens do not form a {h}x{w} grid")
    return tokens.transpose(1, 2).reshape(b, c, h, w)


def grid_to_tokens(feat: Tensor) -> Tensor:
    b, c, h, w = feat.shape
    return feat.reshape(b, c, h * w).transpose(1, 2)


def split_image(image: Tensor, segments: Segments) -> list[Tensor]:
    """Image tokens ``[B, N_Z + N_X, D]`` -> one ``[B, D, h, w]`` map per segment."""
    expected = segments.template + segments.search
    if image.shape[1] != expected:
        raise ShapeError(f"expected {expected} image tokens, got {image.shape[1]}")
    out, start = [], 0
    for grid in segments.grids:
        n = grid[0] * grid[1]
        out.append(tokens_to_grid(image[:, start:start + n], grid))
        start += n
    return out


def merge_image(maps: Sequence[Tensor]) -> Tensor:
    return torch.cat([grid_to_tokens(m) for m in maps], dim=1)


def per_segment(fn: Callable[..., Tensor], segments: Segments, *images: Tensor) -> Tensor:
    """Apply a map-wise ``fn`` to each image segment of every input separately."""
    split = [split_image(im, segments) for im in images]
    return merge_image([fn(*maps) for maps in zip(*split)])
