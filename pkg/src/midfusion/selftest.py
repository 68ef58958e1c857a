"""Fast invariant checks runnable from the command line (``midfusion selftest``)."""
from __future__ import annotations

import math
import tempfile
from pathlib import Path
from typing import Callable

import numpy as np
import torch

from .archive import MissingTensorError, ShapeMismatchError, WeightArchive, apply_archive, archive_module, load_archive, save_archive
from .budget import budget_for_config, sweep
from .config import ConfigError, FoundationConfig, TrackerConfig, TrainConfig, parse_config_text, toy_tracker_config
from .evalkit.metrics import BoundingBox, SequenceRecord, center_error, iou, norm_center_error, precision_curve, success_curve
from .foundation import DimensionError, Foundation, checksum
from .pipeline import ModalFramePair, baseline_track, track
from .prompters import init_prompter_bank, uep_forward
from .training import box_iou_giou, learning_rate


def _toy():
    cfg = toy_tracker_config()
    return cfg, Foundation(cfg.foundation, seed=0)


def check_token_counts():
    assert FoundationConfig().num_template_tokens == 64
    assert FoundationConfig().num_search_tokens == 256
    cfg, f = _toy()
    assert f.embed(torch.zeros(32, 32, 3), "template").data.shape[1] == 4
    assert f.embed(torch.zeros(64, 64, 3), "search").data.shape[1] == 16


def check_dimension_error():
    cfg, f = _toy()
    try:
        f.embed(torch.zeros(33, 32, 3), "template")
    except DimensionError as exc:
        assert exc.axis == "H"
    else:
        raise AssertionError("no dimension error")


def check_zero_projection_identity():
    cfg, f = _toy()
    x = torch.randn(1, 5, cfg.foundation.embed_dim, generator=torch.Generator().manual_seed(0))
    for blk in f.blocks:
        with torch.no_grad():
            for lin in (blk.attn.proj, blk.mlp.fc2):
                lin.weight.zero_()
                lin.bias.zero_()
        assert torch.equal(blk(x), x)


def check_tie_break():
    cfg, f = _toy()
    head = f.head
    with torch.no_grad():
        for br in (head.score, head.offset, head.size):
            br.fc2.weight.zero_()
            br.fc2.bias.zero_()
    out = head(torch.randn(2, 16, cfg.foundation.embed_dim))
    assert out.index.tolist() == [0, 0]


def check_archive_roundtrip():
    cfg, f = _toy()
    with tempfile.TemporaryDirectory() as tmp:
        p = Path(tmp) / "w.mfwa"
        save_archive(archive_module(f), p)
        g = Foundation(cfg.foundation, seed=1)
        apply_archive(load_archive(p), g)
        assert checksum(f) == checksum(g)
    arrays = {k: v for k, v in archive_module(f).subset("").items() if k != "blocks.0.attn.qkv.weight"}
    try:
        apply_archive(WeightArchive.from_arrays(arrays), f)
    except MissingTensorError as exc:
        assert "missing tensor blocks.0.attn.qkv.weight" in str(exc)
    else:
        raise AssertionError("missing tensor not detected")
    arrays = archive_module(f).subset("")
    arrays["norm.bias"] = np.zeros(7, dtype=np.float32)
    try:
        apply_archive(WeightArchive.from_arrays(arrays), f)
    except ShapeMismatchError as exc:
        assert "[16]" in str(exc) and "[7]" in str(exc)
    else:
        raise AssertionError("shape mismatch not detected")


def check_bank_init():
    cfg = toy_tracker_config()
    a, b = init_prompter_bank(cfg, 3), init_prompter_bank(cfg, 3)
    for (n1, p1), (n2, p2) in zip(a.state_dict().items(), b.state_dict().items()):
        assert n1 == n2 and torch.equal(p1, p2)
    for name, m in a.up_projections():
        assert not m.weight.any() and not m.bias.any(), name


def check_zero_init_transparency():
    cfg, f = _toy()
    bank = init_prompter_bank(cfg, 0)
    g = torch.Generator().manual_seed(5)
    z = ModalFramePair(torch.rand(2, 32, 32, 3, generator=g), torch.rand(2, 32, 32, 3, generator=g))
    x = ModalFramePair(torch.rand(2, 64, 64, 3, generator=g), torch.rand(2, 64, 64, 3, generator=g))
    with torch.no_grad():
        tokens = f.embed(z.visible, "template")
        assert not uep_forward(bank.uep_v["2"], tokens).any()
        a = track(bank, f, z, x)
        b = baseline_track(f, z, x, cfg.first_stage_blocks, cfg.prompt_tokens)
    assert torch.equal(a.boxes, b.boxes) and torch.equal(a.score_map, b.score_map)


def check_mfp_weights():
    cfg = toy_tracker_config()
    bank = init_prompter_bank(cfg, 0, torch.float64)
    g = torch.Generator().manual_seed(2)
    fv = torch.randn(3, cfg.foundation.embed_dim, 2, 2, generator=g, dtype=torch.float64)
    parts = bank.mfp.parts(fv, torch.randn(fv.shape, generator=g, dtype=torch.float64))
    assert torch.allclose(parts["weights"].sum(1), torch.ones(3, 2, 2, dtype=torch.float64), atol=1e-12)
    same = bank.mfp.parts(fv, fv)
    if torch.equal(bank.mfp.down_v.weight, bank.mfp.down_t.weight):
        assert torch.all(same["only_v"] == 0.5)


def check_box_metrics():
    a, b = BoundingBox(0, 0, 2, 2), BoundingBox(1, 0, 2, 2)
    assert math.isclose(iou(a, b), 1 / 3)
    assert iou(a, a) == 1.0 and iou(a, BoundingBox(5, 5, 1, 1)) == 0.0
    assert center_error(BoundingBox(3, 4, 10, 20), BoundingBox(0, 0, 10, 20)) == 5.0
    assert math.isclose(norm_center_error(BoundingBox(3, 4, 10, 20), BoundingBox(0, 0, 10, 20)), math.sqrt(0.13))
    _, giou = box_iou_giou(torch.tensor([0.0, 0, 2, 2]), torch.tensor([1.0, 0, 2, 2]))
    assert math.isclose(float(giou), 1 / 3, rel_tol=1e-6)


def check_perfect_tracker_curves():
    gt = np.array([[10, 10, 20, 30], [5, 5, 8, 8], [0, 0, 0, 0]], dtype=float)
    rec = [SequenceRecord("s", gt.copy(), gt)]
    pr = precision_curve(rec)
    sr = success_curve(rec)
    assert pr.representative == 1.0 and np.all(pr.values == 1.0) and pr.frames == 2
    assert math.isclose(sr.representative, 20 / 21)


def check_config():
    cfg = parse_config_text("")
    assert cfg.tracker.first_stage_blocks == 10 and cfg.tracker.uep_layers == (2, 5, 8)
    assert cfg.tracker.prompt_tokens == 2
    try:
        parse_config_text("first_stage_blocks=12")
    except ConfigError:
        pass
    else:
        raise AssertionError("M >= 1 not enforced")
    again = parse_config_text(cfg.to_text())
    assert again == cfg and again.hash == cfg.hash


def check_lr_schedule():
    tc = TrainConfig()
    assert learning_rate(0, tc) == 4e-4 and learning_rate(47, tc) == 4e-4
    assert learning_rate(48, tc) == 4e-4 * 0.1


def check_budget_and_cost():
    b = budget_for_config(TrackerConfig())
    assert 0.30e6 <= b.tuned_params <= 0.40e6
    assert 0.0030 <= b.tuned_fraction <= 0.0045
    flops = [r.flops for r in sweep(TrackerConfig(), range(1, 12))]
    assert all(a < b for a, b in zip(flops, flops[1:]))


CHECKS: list[tuple[str, Callable[[], None]]] = [
    ("token counts", check_token_counts),
    ("non-divisible image rejected", check_dimension_error),
    ("zero-projection block identity", check_zero_projection_identity),
    ("score-map tie-break", check_tie_break),
    ("weight archive round-trip and errors", check_archive_roundtrip),
    ("prompter bank init", check_bank_init),
    ("zero-init transparency", check_zero_init_transparency),
    ("MFP weight normalization", check_mfp_weights),
    ("box metrics", check_box_metrics),
    ("perfect-tracker curves", check_perfect_tracker_curves),
    ("config defaults and constraints", check_config),
    ("learning-rate schedule", check_lr_schedule),
    ("parameter budget and cost ordering", check_budget_and_cost),
]


def run_selftest(echo: Callable[[str], None] = print) -> int:
    failures = 0
    torch.manual_seed(0)
    for name, fn in CHECKS:
        try:
            fn()
        except Exception as exc:  # noqa: BLE001 - report every failure
            failures += 1
            echo(f"FAIL  {name}: {type(exc).__name__}: {exc}")
        else:
            echo(f"PASS  {name}")
    echo(f"{len(CHECKS) - failures}/{len(CHECKS)} checks passed")
    return failures
