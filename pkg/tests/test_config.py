from __future__ import annotations

import pytest

from defstream.config import (
    ConfigError,
    RunConfig,
    parse_config_text,
    variant_name,
    VARIANT_SWITCHES,
)

SAMPLE = """
# experiment
[run]
out = runs/x
seeds = 0, 1, 2
replay = true

[attacks]
epsilon = 8/255
steps = 10

[schedule]
stages = fgsm, nim
"""


def test_grammar_scalars_and_sections():
    tree = parse_config_text(SAMPLE)
    assert tree["run"]["out"] == "runs/x"
    assert tree["run"]["seeds"] == [0, 1, 2]
    assert tree["run"]["replay"] is True
    assert tree["attacks"]["epsilon"] == pytest.approx(8 / 255)
    assert tree["attacks"]["steps"] == 10
    assert tree["schedule"]["stages"] == ["fgsm", "nim"]


def test_grammar_nested_sections():
    tree = parse_config_text("[a.b]\nk = 1\n[a.c]\nk = 2\n")
    assert tree == {"a": {"b": {"k": 1}, "c": {"k": 2}}}


def test_grammar_errors_carry_line_numbers():
    with pytest.raises(ConfigError, match="line 2"):
        parse_config_text("[ok]\nbroken line\n")


def test_runconfig_defaults_and_aliases():
    cfg = RunConfig.from_tree(parse_config_text(SAMPLE))
    assert cfg.stage_families == ["fgsm", "mim"]  # nim aliases to mim
    assert cfg.layer_widths == [64, 64, 64, 10]
    assert cfg.epochs_clean == 10 and cfg.epochs_adv == 5
    assert cfg.capacity == 1000 and cfg.views == 8
    assert cfg.momentum == 0.9 and cfg.weight_decay == pytest.approx(5e-4)


def test_variant_mapping_is_bijective():
    names = {variant_name(r, c) for r in (False, True) for c in (False, True)}
    assert names == {"baseline", "consistency", "replay", "full"}
    for name, (r, c) in VARIANT_SWITCHES.items():
        assert variant_name(r, c) == name


def test_schedule_builder_shapes():
    cfg = RunConfig.from_tree(parse_config_text(SAMPLE))
    schedule = cfg.schedule(seed=7)
    assert [s.stage_id for s in schedule.stages] == [0, 1, 2]
    assert schedule.stages[0].attack is None
    assert schedule.stages[1].attack.family == "fgsm"
    assert schedule.stages[1].attack.epsilon == pytest.approx(8 / 255)
    assert schedule.stages[2].attack.family == "mim"
    assert schedule.master_seed == 7
    # inner perturbation inherits the stage budget when not overridden
    assert schedule.consistency.attack.epsilon == pytest.approx(8 / 255)


def test_inner_attack_override():
    text = SAMPLE + "\n[consistency]\nepsilon = 0.1\nalpha = 0.025\nsteps = 7\n"
    cfg = RunConfig.from_tree(parse_config_text(text))
    inner = cfg.consistency_config().attack
    assert inner.epsilon == pytest.approx(0.1)
    assert inner.alpha == pytest.approx(0.025)
    assert inner.steps == 7


def test_resolved_text_round_trips():
    cfg = RunConfig.from_tree(parse_config_text(SAMPLE))
    back = RunConfig.from_tree(parse_config_text(cfg.resolved_text(seed=1)))
    assert back.seeds == [1]
    assert back.stage_families == cfg.stage_families
    assert back.epsilon == pytest.approx(cfg.epsilon)
    assert back.hidden == cfg.hidden
    assert back.variant == cfg.variant


def test_missing_config_file_rejected(tmp_path):
    with pytest.raises(ConfigError):
        RunConfig.from_file(tmp_path / "absent.cfg")


def test_degenerate_configs_rejected():
    with pytest.raises(ConfigError):
        RunConfig.from_tree(parse_config_text("[data]\nclasses = 1\n"))
    with pytest.raises(ConfigError):
        RunConfig.from_tree(parse_config_text("[schedule]\nstages =\n"))
