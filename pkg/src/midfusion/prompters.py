"""Trainable prompters and the bank that holds all tuned parameters.

Every prompter works on image feature maps ``[B, C, h, w]``; the
``*_forward`` functions at the bottom adapt them to token sequences, reshaping
the template and search segments to their own grids and skipping the
learnable prompt tokens.
"""
from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import Tensor, nn

from .config import TrackerConfig
from .tokens import Segments, ShapeError, TokenSeq, per_segment, tokens_to_grid, grid_to_tokens

FAMILIES = ("uep", "ip", "mfp", "fep", "prompts")


def conv1x1(cin: int, cout: int) -> nn.Conv2d:
    return nn.Conv2d(cin, cout, kernel_size=1)


class UEP(nn.Module):
    """Uni-modal exploration prompter.

    In ``low_dim`` channels, a 1x1 conv, a depthwise 3x3 conv and a dilated
    3x3 conv run in parallel; their sum goes through a 1x1 conv and GELU and
    is projected back up. :meth:`delta` is the prompt added to the encoder
    output, :meth:`forward` adds the residual input back.
    """

    def __init__(self, dim: int, low_dim: int = 8, kernel: int = 3, dilation: int = 2):
        super().__init__()
        self.down = conv1x1(dim, low_dim)
        self.std = conv1x1(low_dim, low_dim)
        self.dw = nn.Conv2d(low_dim, low_dim, kernel, padding=kernel // 2, groups=low_dim)
        self.dl = nn.Conv2d(low_dim, low_dim, kernel, padding=dilation * (kernel // 2), dilation=dilation)
        self.merge = conv1x1(low_dim, low_dim)
        self.up = conv1x1(low_dim, dim)

    def delta(self, feat: Tensor) -> Tensor:
        low = self.down(feat)
        summed = self.std(low) + self.dl(low) + self.dw(low)
        return self.up(F.gelu(self.merge(summed)))

    def forward(self, feat: Tensor) -> Tensor:
        return feat + self.delta(feat)


class IP(nn.Module):
    """Inter-modal prompter: the channel mean of the prompting template is
    stacked in front of the prompted template's low-dim channels and mixed
    by a 1x1 conv."""

    def __init__(self, dim: int, low_dim: int = 8):
        super().__init__()
        self.down_prompted = conv1x1(dim, low_dim)
        self.down_prompting = conv1x1(dim, low_dim)
        self.merge = conv1x1(low_dim + 1, low_dim)
        self.up = conv1x1(low_dim, dim)

    def pooled(self, prompting: Tensor) -> Tensor:
        return self.down_prompting(prompting).mean(dim=1, keepdim=True)

    def delta(self, prompted: Tensor, prompting: Tensor) -> Tensor:
        stacked = torch.cat([self.pooled(prompting), self.down_prompted(prompted)], dim=1)
        return self.up(self.merge(stacked))

    def forward(self, prompted: Tensor, prompting: Tensor) -> Tensor:
        if prompted.shape != prompting.shape:
            raise ShapeError(f"IP inputs differ: {tuple(prompted.shape)} vs {tuple(prompting.shape)}")
        return prompted + self.delta(prompted, prompting)


class MFP(nn.Module):
    """Middle-fusion prompter.

    Both modalities go to ``low_dim`` channels through private 1x1 convs. From
    the shared (product), overall (sum) and the two sigmoid-difference
    features a 1x1 conv predicts two maps, softmaxed against each other into
    per-location weights. The fused low-dim map is
    ``shared + v * w_v + t * w_t``; it is projected up and added to the mean
    of the two inputs.
    """

    def __init__(self, dim: int, low_dim: int = 16):
        super().__init__()
        self.down_v = conv1x1(dim, low_dim)
        self.down_t = conv1x1(dim, low_dim)
        self.weight_fc = conv1x1(5 * low_dim, 2)
        self.up = conv1x1(low_dim, dim)

    def parts(self, feat_v: Tensor, feat_t: Tensor) -> dict[str, Tensor]:
        v = self.down_v(feat_v)
        t = self.down_t(feat_t)
        shared = v * t
        overall = v + t
        only_v = torch.sigmoid(v - t)
        only_t = torch.sigmoid(t - v)
        stacked = torch.cat([only_v, shared, overall, shared, only_t], dim=1)
        weights = torch.softmax(self.weight_fc(stacked), dim=1)
        fused = shared + v * weights[:, 0:1] + t * weights[:, 1:2]
        return {"low_v": v, "low_t": t, "shared": shared, "overall": overall, "only_v": only_v,
                "only_t": only_t, "weights": weights, "fused_low": fused}

    def forward(self, feat_v: Tensor, feat_t: Tensor) -> Tensor:
        if feat_v.shape != feat_t.shape:
            raise ShapeError(f"MFP inputs differ: {tuple(feat_v.shape)} vs {tuple(feat_t.shape)}")
        return 0.5 * (feat_v + feat_t) + self.up(self.parts(feat_v, feat_t)["fused_low"])


def fovea(z: Tensor) -> Tensor:
    """``z`` gated by its own softmax over spatial positions, per channel."""
    b, c, h, w = z.shape
    mask = torch.softmax(z.reshape(b, c, h * w), dim=-1).reshape(b, c, h, w)
    return z * mask


class FEP(nn.Module):
    """Fusion-modal enhancing prompter: ``up(fovea(down(prompt)) + down(feat))``."""

    def __init__(self, dim: int, low_dim: int = 8):
        super().__init__()
        self.down_prompt = conv1x1(dim, low_dim)
        self.down_feat = conv1x1(dim, low_dim)
        self.up = conv1x1(low_dim, dim)

    def forward(self, prompt: Tensor, feat: Tensor) -> Tensor:
        if prompt.shape != feat.shape:
            raise ShapeError(f"FEP inputs differ: {tuple(prompt.shape)} vs {tuple(feat.shape)}")
        return self.up(fovea(self.down_prompt(prompt)) + self.down_feat(feat))


class PrompterBank(nn.Module):
    """Every trainable tensor of the tracker.

    ``uep_v``/``uep_t`` are keyed by 1-based block index; ``ip[n-1]`` serves
    block ``n`` (and ``ip_t2v[n-1]`` the thermal-to-visible direction when
    ``ip_per_direction`` is set); ``fep[k]`` serves block ``N + 1 + k``.
    """

    def __init__(self, cfg: TrackerConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        d = cfg.foundation.embed_dim
        N, M, P = cfg.first_stage_blocks, cfg.second_stage_blocks, cfg.prompt_tokens
        self.uep_v = nn.ModuleDict({str(n): UEP(d, cfg.uep_low_dim) for n in cfg.uep_layers})
        self.uep_t = nn.ModuleDict({str(n): UEP(d, cfg.uep_low_dim) for n in cfg.uep_layers})
        self.ip = nn.ModuleList(IP(d, cfg.ip_low_dim) for _ in range(N))
        self.ip_t2v = nn.ModuleList(IP(d, cfg.ip_low_dim) for _ in range(N if cfg.ip_per_direction else 0))
        self.mfp = MFP(d, cfg.mfp_low_dim)
        self.fep = nn.ModuleList(FEP(d, cfg.fep_low_dim) for _ in range(M))
        self.visible_prompt = nn.Parameter(torch.zeros(P, d))
        self.thermal_prompt = nn.Parameter(torch.zeros(P, d))
        self.fusion_prompt = nn.Parameter(torch.zeros(P, d))

    def ip_v2t(self, n: int) -> IP:
        return self.ip[n - 1]

    def ip_to_visible(self, n: int) -> IP:
        return self.ip_t2v[n - 1] if self.cfg.ip_per_direction else self.ip[n - 1]

    def family(self, name: str) -> str:
        head = name.split(".", 1)[0]
        if head.startswith("uep"):
            return "uep"
        if head.startswith("ip"):
            return "ip"
        if head in ("mfp", "fep"):
            return head
        return "prompts"

    def family_sizes(self) -> dict[str, int]:
        sizes = dict.fromkeys(FAMILIES, 0)
        for name, p in self.named_parameters():
            sizes[self.family(name)] += p.numel()
        return sizes

    def up_projections(self) -> list[tuple[str, nn.Conv2d]]:
        return [(name, m) for name, m in self.named_modules() if name.endswith(".up") or name == "mfp.up"]


def init_prompter_bank(cfg: TrackerConfig, seed: int = 0, dtype: torch.dtype = torch.float32) -> PrompterBank:
    """Deterministic bank: up-projections and prompt tokens zero, the rest small-random."""
    bank = PrompterBank(cfg).to(dtype)
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for name, p in bank.named_parameters():
            is_up = ".up." in name or name.startswith("mfp.up.")
            if is_up or name.endswith("bias") or name.endswith("_prompt"):
                p.zero_()
            else:
                fan_in = math.prod(p.shape[1:])
                bound = 1.0 / math.sqrt(fan_in)
                p.uniform_(-bound, bound, generator=gen)
    return bank


# ---------------------------------------------------------------------------
# token-level application


def uep_forward(uep: UEP, tokens: TokenSeq) -> Tensor:
    """Prompt delta ``[B, N_Z + N_X, D]`` for the image tokens of ``tokens``."""
    return per_segment(uep.delta, tokens.segments, tokens.image)


def ip_forward(ip: IP, prompted: Tensor, prompting: Tensor, grid: tuple[int, int]) -> Tensor:
    """Prompt the template tokens ``prompted`` with ``prompting``; both ``[B, N_Z, D]``."""
    if prompted.shape != prompting.shape:
        raise ShapeError(f"IP token counts differ: {tuple(prompted.shape)} vs {tuple(prompting.shape)}")
    return grid_to_tokens(ip(tokens_to_grid(prompted, grid), tokens_to_grid(prompting, grid)))


def mfp_forward(mfp: MFP, tokens_v: TokenSeq, tokens_t: TokenSeq) -> TokenSeq:
    """Fuse the image tokens of both modalities; result has no prompt segment."""
    sv, st = tokens_v.segments.image_only(), tokens_t.segments.image_only()
    if sv != st:
        raise ShapeError(f"modal segment structures differ: {sv} vs {st}")
    return TokenSeq(per_segment(mfp, sv, tokens_v.image, tokens_t.image), sv)


def fep_forward(fep: FEP, prompt_in: Tensor, feat: Tensor, segments: Segments) -> Tensor:
    """FEP on image tokens ``[B, N_Z + N_X, D]``; returns the prompt of the same shape."""
    if prompt_in.shape != feat.shape:
        raise ShapeError(f"FEP token shapes differ: {tuple(prompt_in.shape)} vs {tuple(feat.shape)}")
    return per_segment(fep, segments.image_only(), prompt_in, feat)
