from pathlib import Path

import pytest

from midfusion.config import ConfigError, TrackerConfig, default_config, parse_config, parse_config_text, toy_tracker_config

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def test_empty_config_gives_defaults():
    cfg = parse_config_text("")
    t = cfg.tracker
    assert t.foundation.num_blocks == 12 and t.foundation.embed_dim == 768
    assert t.first_stage_blocks == 10 and t.second_stage_blocks == 2
    assert t.uep_layers == (2, 5, 8) and t.prompt_tokens == 2
    assert cfg.train.batch_size == 32 and cfg.train.epochs == 60 and cfg.train.learning_rate == 4e-4
    assert cfg.train.loss.lambda_giou == 2.0 and cfg.train.loss.lambda_l1 == 5.0
    assert cfg.eval.precision_at == 20 and cfg.eval.norm_precision_at == 0.2


def test_first_stage_must_leave_a_second_stage():
    with pytest.raises(ConfigError, match="first_stage_blocks"):
        parse_config_text("first_stage_blocks = 12")
    with pytest.raises(ConfigError):
        parse_config_text("first_stage_blocks = 0")


def test_all_problems_reported_at_once():
    with pytest.raises(ConfigError) as info:
        parse_config_text("first_stage_blocks = 12\nbogus = 1\nbatch_size = x\nembed_dim = 100\n")
    text = str(info.value)
    for fragment in ("first_stage_blocks", "bogus", "batch_size", "line 2", "line 3"):
        assert fragment in text
    assert len(info.value.problems) >= 4


def test_uep_layer_must_be_in_first_stage():
    with pytest.raises(ConfigError, match="uep"):
        parse_config_text("uep_layers = 2,11")


def test_duplicate_key():
    with pytest.raises(ConfigError, match="duplicate"):
        parse_config_text("seed = 1\nseed = 2\n")


def test_overrides_and_alias():
    cfg = parse_config_text("seed = 1", ["seed=7", "fusion_location = 6", "uep_layers=none"])
    assert cfg.train.seed == 7 and cfg.tracker.first_stage_blocks == 6 and cfg.tracker.uep_layers == ()


def test_round_trip_and_hash():
    cfg = parse_config_text("search_size = 256x320\nmax_fusion = yes\nlearning_rate = 1e-3")
    again = parse_config_text(cfg.to_text())
    assert again == cfg and again.hash == cfg.hash
    assert parse_config_text("seed = 3").hash != default_config().hash


def test_comments_and_blank_lines():
    assert parse_config_text("# header\n\nseed = 4  # trailing\n").train.seed == 4


def test_shipped_configs():
    assert parse_config(CONFIGS / "reference.cfg") == default_config()
    toy = parse_config(CONFIGS / "toy.cfg")
    assert toy.tracker == toy_tracker_config()
    assert toy.train.batch_size == 8 and toy.train.total_steps == 200 and toy.train.synthetic_pairs == 20


def test_tracker_validate():
    with pytest.raises(ConfigError):
        TrackerConfig(first_stage_blocks=12).validate()
    assert TrackerConfig().with_fusion_location(4).first_stage_blocks == 4
