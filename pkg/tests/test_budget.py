import pytest

from midfusion.budget import (budget_csv, budget_for_config, block_macs, cost_model, count_parameters, sweep,
                              sweep_csv, sweep_table)
from midfusion.config import TrackerConfig, toy_tracker_config
from midfusion.foundation import Foundation
from midfusion.prompters import init_prompter_bank

import oracles


def test_reference_budget_brackets_reported_figure():
    b = budget_for_config(TrackerConfig())
    assert 0.30e6 <= b.tuned_params <= 0.40e6
    assert 0.0030 <= b.tuned_fraction <= 0.0045
    assert b.total_params == b.foundation_params + b.tuned_params
    assert sum(b.per_component.values()) == b.tuned_params


def test_reference_budget_closed_form():
    cfg = TrackerConfig()
    D = 768
    per = budget_for_config(cfg).per_component
    assert per["uep"] == 2 * 3 * oracles.uep_params(D, 8)
    assert per["ip"] == 10 * oracles.ip_params(D, 8)
    assert per["mfp"] == oracles.mfp_params(D, 16)
    assert per["fep"] == 2 * oracles.fep_params(D, 8)
    assert per["prompts"] == 3 * 2 * D


def test_toy_budget_closed_form(toy_cfg):
    bank = init_prompter_bank(toy_cfg, 0)
    f = Foundation(toy_cfg.foundation, 0)
    b = count_parameters(bank, f)
    D = 16
    want = (2 * oracles.uep_params(D, 8) + 2 * oracles.ip_params(D, 8) + oracles.mfp_params(D, 16)
            + 2 * oracles.fep_params(D, 8) + 3 * 2 * D)
    assert b.tuned_params == want
    assert b.tuned_params == sum(p.numel() for p in bank.parameters())
    assert b.foundation_params == sum(p.numel() for p in f.parameters())
    assert budget_for_config(toy_cfg) == b


def test_minimal_config_is_fusion_and_enhancing_prompters_plus_one_ip():
    cfg = toy_tracker_config(prompt_tokens=0, uep_layers=(), first_stage_blocks=1)
    per = budget_for_config(cfg).per_component
    assert per["uep"] == 0 and per["prompts"] == 0
    # stage 1 keeps its single inter-modal prompter (block 1 still exchanges templates)
    assert per["ip"] == oracles.ip_params(16, 8)
    assert budget_for_config(cfg).tuned_params == (oracles.mfp_params(16, 16) + 3 * oracles.fep_params(16, 8)
                                                   + oracles.ip_params(16, 8))


def test_per_direction_ip_doubles_ip_count():
    a = budget_for_config(toy_tracker_config()).per_component["ip"]
    b = budget_for_config(toy_tracker_config(ip_per_direction=True)).per_component["ip"]
    assert b == 2 * a


def test_cost_strictly_increases_with_fusion_location():
    reports = sweep(TrackerConfig(), range(1, 12))
    flops = [r.flops for r in reports]
    assert all(a < b for a, b in zip(flops, flops[1:]))
    assert [r.fusion_location for r in reports] == list(range(1, 12))


def test_cost_orderings_follow_reported_speeds():
    base = TrackerConfig()
    # fusion location 1 / 6 / 11 were timed at 94.7 / 71.3 / 59.1 fps
    loc = {n: cost_model(base.with_fusion_location(n)).flops for n in (1, 6, 11)}
    assert loc[1] < loc[6] < loc[11]
    # first-stage block numbers 3 / 6 / 10 were timed at 44.6 / 39.9 / 34.1 fps
    blocks = {n: cost_model(base.with_fusion_location(n)).flops for n in (3, 6, 10)}
    assert blocks[3] < blocks[6] < blocks[10]


@pytest.mark.parametrize("L", [4, 12, 24])
def test_backbone_ratio_closed_form(L):
    from dataclasses import replace

    from midfusion.config import FoundationConfig

    cfg = TrackerConfig(foundation=replace(FoundationConfig(), num_blocks=L), first_stage_blocks=1, uep_layers=())
    hi = cost_model(cfg.with_fusion_location(L - 1)).backbone_macs
    lo = cost_model(cfg.with_fusion_location(1)).backbone_macs
    assert hi * (L + 1) == lo * (2 * L - 1)


def test_block_macs_closed_form():
    T, D, H = 322, 768, 3072
    assert block_macs(T, D, H) == 4 * T * D * D + 2 * T * T * D + 2 * T * D * H


def test_with_fusion_location_drops_uep_layers_beyond_n():
    cfg = TrackerConfig().with_fusion_location(4)
    assert cfg.first_stage_blocks == 4 and cfg.uep_layers == (2,)


def test_reports_render():
    reports = sweep(TrackerConfig(), [1, 2])
    table = sweep_table(reports)
    assert table.splitlines()[0].split()[0] == "fusion_location" and len(table.splitlines()) == 3
    csv_text = sweep_csv(reports)
    assert csv_text.splitlines()[0].startswith("fusion_location,")
    b = budget_for_config(TrackerConfig())
    assert "tuned fraction" in b.table()
    assert budget_csv(b).splitlines()[0] == "component,params"
