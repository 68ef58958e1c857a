"""Parameter budget and analytic multiply-accumulate cost of a tracker config."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import torch

from .config import TrackerConfig
from .foundation import Foundation
from .prompters import FAMILIES, PrompterBank


@dataclass(frozen=True)
class ParamBudget:
    foundation_params: int
    tuned_params: int
    per_component: dict[str, int] = field(default_factory=dict)

    @property
    def total_params(self) -> int:
        return self.foundation_params + self.tuned_params

    @property
    def tuned_fraction(self) -> float:
        return self.tuned_params / self.foundation_params

    def table(self) -> str:
        rows = [("component", "params")]
        rows += [(k, f"{v:,}") for k, v in self.per_component.items()]
        rows += [("tuned total", f"{self.tuned_params:,} ({self.tuned_params / 1e6:.3f}M)"),
                 ("foundation", f"{self.foundation_params:,} ({self.foundation_params / 1e6:.2f}M)"),
                 ("total", f"{self.total_params:,}"),
                 ("tuned fraction", f"{100 * self.tuned_fraction:.3f}%")]
        width = max(len(r[0]) for r in rows)
        return "\n".join(f"{a:<{width}}  {b}" for a, b in rows) + "\n"


def count_parameters(bank: PrompterBank, foundation: Foundation) -> ParamBudget:
    per = bank.family_sizes()
    tuned = sum(p.numel() for p in bank.parameters())
    assert tuned == sum(per.values())
    return ParamBudget(sum(p.numel() for p in foundation.parameters()), tuned, per)


def budget_for_config(cfg: TrackerConfig) -> ParamBudget:
    """Budget without allocating weights (modules are built on the meta device)."""
    cfg.validate()
    with torch.device("meta"):
        foundation = Foundation(cfg.foundation, init=False)
        bank = PrompterBank(cfg)
    return count_parameters(bank, foundation)


# ---------------------------------------------------------------------------
# cost model


def block_macs(tokens: int, dim: int, hidden: int) -> int:
    """Self-attention + MLP block over ``tokens`` tokens (norms and softmax ignored)."""
    qkv = tokens * dim * 3 * dim
    scores = tokens * tokens * dim
    mix = tokens * tokens * dim
    proj = tokens * dim * dim
    mlp = 2 * tokens * dim * hidden
    return qkv + scores + mix + proj + mlp


def uep_macs(n: int, dim: int, d: int, kernel: int = 3) -> int:
    k2 = kernel * kernel
    return n * (dim * d + d * d + d * k2 + d * d * k2 + d * d + d * dim)


def ip_macs(n: int, dim: int, d: int) -> int:
    return n * (2 * dim * d + d + (d + 1) * d + d * dim)


def mfp_macs(n: int, dim: int, m: int) -> int:
    # the elementwise shared/overall/sigmoid/weighting terms are a handful of ops per channel
    return n * (2 * dim * m + 5 * m * 2 + 6 * m + m * dim)


def fep_macs(n: int, dim: int, d: int) -> int:
    return n * (2 * dim * d + 2 * d + d * dim)


@dataclass(frozen=True)
class CostReport:
    fusion_location: int
    components: dict[str, int]

    @property
    def macs(self) -> int:
        return sum(self.components.values())

    @property
    def flops(self) -> int:
        return 2 * self.macs

    @property
    def backbone_macs(self) -> int:
        return self.components["stage1_blocks"] + self.components["stage2_blocks"]


def cost_model(cfg: TrackerConfig) -> CostReport:
    """Multiply-accumulate count of one tracking step.

    Stage-1 blocks run once per modality, stage-2 blocks once.
    """
    cfg.validate()
    f = cfg.foundation
    D, H = f.embed_dim, f.mlp_hidden
    nz, nx = f.num_template_tokens, f.num_search_tokens
    n_img = nz + nx
    T = cfg.num_tokens
    N, M = cfg.first_stage_blocks, cfg.second_stage_blocks
    ip_count = 2 * N
    comps = {
        "embed": 2 * n_img * 3 * f.patch_size ** 2 * D,
        "stage1_blocks": 2 * N * block_macs(T, D, H),
        "stage2_blocks": M * block_macs(T, D, H),
        "uep": 2 * len(cfg.uep_layers) * uep_macs(n_img, D, cfg.uep_low_dim),
        "ip": ip_count * ip_macs(nz, D, cfg.ip_low_dim),
        "mfp": mfp_macs(n_img, D, cfg.mfp_low_dim),
        "fep": M * fep_macs(n_img, D, cfg.fep_low_dim),
        "head": nx * (3 * D * f.head_hidden + f.head_hidden * 5),
    }
    return CostReport(N, comps)


def sweep(cfg: TrackerConfig, locations: range | list[int]) -> list[CostReport]:
    return [cost_model(cfg.with_fusion_location(n)) for n in locations]


def sweep_table(reports: list[CostReport]) -> str:
    rows = [f"{'fusion_location':>15}  {'GMACs':>10}  {'GFLOPs':>10}  {'backbone_GMACs':>14}"]
    for r in reports:
        rows.append(f"{r.fusion_location:>15}  {r.macs / 1e9:>10.4f}  {r.flops / 1e9:>10.4f}  "
                    f"{r.backbone_macs / 1e9:>14.4f}")
    return "\n".join(rows) + "\n"


def sweep_csv(reports: list[CostReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    keys = list(reports[0].components) if reports else []
    w.writerow(["fusion_location", *keys, "macs", "flops"])
    for r in reports:
        w.writerow([r.fusion_location, *(r.components[k] for k in keys), r.macs, r.flops])
    return buf.getvalue()


def budget_csv(budget: ParamBudget) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["component", "params"])
    for k in FAMILIES:
        w.writerow([k, budget.per_component.get(k, 0)])
    w.writerow(["tuned", budget.tuned_params])
    w.writerow(["foundation", budget.foundation_params])
    return buf.getvalue()
