from __future__ import annotations

import hashlib
import json
from pathlib import Path

import pytest

from defstream.cli import main
from defstream.evaluate import load_report

MINI = """
[run]
out = {out}
seeds = 0
[data]
classes = 4
image_hw = 6
per_class_train = 12
per_class_test = 12
noise = 0.3
[model]
hidden = 24
[optim]
epochs_clean = 3
epochs_adv = 2
lr_adv = 0.06
[replay]
capacity = 30
views = 4
[consistency]
epsilon = 0.1
alpha = 0.025
steps = 3
[attacks]
epsilon = 0.25
steps = 4
[schedule]
stages = {stages}
"""


def _digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _tree_digest(root: Path, pattern: str) -> dict[str, str]:
    return {p.name: _digest(p) for p in sorted(root.glob(pattern))}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli")
    cfg = out / "mini.cfg"
    cfg.write_text(MINI.format(out=out / "exp", stages="fgsm, pgd"))
    assert main(["gen-data", "--config", str(cfg)]) == 0
    assert main(["train", "--config", str(cfg)]) == 0
    return out


def test_gen_data_file_counts(workspace):
    files = sorted((workspace / "exp" / "data-seed0").glob("*.ds"))
    names = [f.name for f in files]
    assert names == ["adv_test_stage1_fgsm.ds", "adv_test_stage2_pgd.ds",
                     "adv_train_stage1_fgsm.ds", "adv_train_stage2_pgd.ds",
                     "clean_test.ds", "clean_train.ds"]


def test_gen_data_refuses_overwrite_without_force(workspace):
    data = workspace / "exp" / "data-seed0"
    before = _tree_digest(data, "*.ds")
    assert main(["gen-data", "--config", str(workspace / "mini.cfg")]) == 3
    assert _tree_digest(data, "*.ds") == before


def test_gen_data_force_rewrites_identical_bytes(workspace):
    data = workspace / "exp" / "data-seed0"
    before = _tree_digest(data, "*.ds")
    assert main(["gen-data", "--config", str(workspace / "mini.cfg"),
                 "--force"]) == 0
    assert _tree_digest(data, "*.ds") == before


def test_victim_checkpoint_matches_trained_stage0(workspace):
    data = workspace / "exp" / "data-seed0"
    run = workspace / "exp" / "run-seed0-full"
    assert _digest(data / "victim_stage0.ckpt") == _digest(run / "stage_0.ckpt")


def test_surrogate_differs_from_every_defense_snapshot(workspace):
    from defstream.model import load_checkpoint

    data = workspace / "exp" / "data-seed0"
    run = workspace / "exp" / "run-seed0-full"
    surrogate = load_checkpoint(data / "surrogate.ckpt")
    for ckpt in sorted(run.glob("stage_*.ckpt")):
        assert load_checkpoint(ckpt).param_hash() != surrogate.param_hash()


def test_run_dir_contains_frozen_config(workspace):
    resolved = workspace / "exp" / "run-seed0-full" / "config.resolved.cfg"
    text = resolved.read_text()
    assert "[run]" in text and "seeds = 0" in text
    assert "replay = true" in text and "consistency = true" in text


def test_train_rerun_bit_identical(workspace):
    run = workspace / "exp" / "run-seed0-full"
    before = _tree_digest(run, "stage_*.ckpt")
    before_report = _digest(run / "eval_report.json")
    assert main(["train", "--config", str(workspace / "mini.cfg")]) == 0
    assert _tree_digest(run, "stage_*.ckpt") == before
    assert _digest(run / "eval_report.json") == before_report


def test_resume_reproduces_uninterrupted_run(workspace):
    run = workspace / "exp" / "run-seed0-full"
    before = _digest(run / "stage_2.ckpt")
    before_report = _digest(run / "eval_report.json")
    assert main(["train", "--config", str(workspace / "mini.cfg"),
                 "--stage", "2"]) == 0
    assert _digest(run / "stage_2.ckpt") == before
    assert _digest(run / "eval_report.json") == before_report


def test_eval_twice_identical_files(workspace, tmp_path):
    cfg = str(workspace / "mini.cfg")
    ckpt = str(workspace / "exp" / "run-seed0-full" / "stage_2.ckpt")
    assert main(["eval", "--config", cfg, "--checkpoint", ckpt]) == 0
    out = Path(ckpt).with_suffix(".eval.json")
    first = _digest(out)
    assert main(["eval", "--config", cfg, "--checkpoint", ckpt]) == 0
    assert _digest(out) == first


def test_eval_rejects_version_mismatch(workspace, tmp_path):
    ckpt = workspace / "exp" / "run-seed0-full" / "stage_2.ckpt"
    bad = tmp_path / "bad.ckpt"
    raw = bytearray(ckpt.read_bytes())
    raw[4] = 42
    bad.write_bytes(bytes(raw))
    assert main(["eval", "--config", str(workspace / "mini.cfg"),
                 "--checkpoint", str(bad)]) == 3


def test_zero_budget_eval_equals_clean_accuracy(tmp_path):
    cfg = tmp_path / "zero.cfg"
    text = MINI.format(out=tmp_path / "exp", stages="fgsm, pgd")
    cfg.write_text(text.replace("epsilon = 0.25", "epsilon = 0")
                   .replace("epsilon = 0.1", "epsilon = 0"))
    assert main(["gen-data", "--config", str(cfg)]) == 0
    assert main(["train", "--config", str(cfg)]) == 0
    report = load_report(tmp_path / "exp" / "run-seed0-full" /
                         "eval_report.json")
    for acc in report.per_attack_accuracy.values():
        assert acc == report.clean_accuracy


def test_missing_datasets_fail_with_io_code(tmp_path):
    cfg = tmp_path / "never.cfg"
    cfg.write_text(MINI.format(out=tmp_path / "exp", stages="fgsm"))
    assert main(["train", "--config", str(cfg)]) == 3


def test_bad_config_fails_with_config_code(tmp_path):
    cfg = tmp_path / "broken.cfg"
    cfg.write_text("[data]\nclasses = 1\n")
    assert main(["train", "--config", str(cfg)]) == 2
    assert main(["gen-data", "--config", str(tmp_path / "missing.cfg")]) == 2


def test_numeric_failure_exit_code(workspace, monkeypatch):
    import defstream.cli as cli

    def exploding(*args, **kwargs):
        raise FloatingPointError("non-finite training loss in stage 1")

    monkeypatch.setattr(cli, "run_schedule", exploding)
    assert main(["train", "--config", str(workspace / "mini.cfg")]) == 4


def test_ablate_grid_shape_and_determinism(tmp_path):
    cfg = tmp_path / "grid.cfg"
    cfg.write_text(MINI.format(out=tmp_path / "exp", stages="fgsm"))
    assert main(["gen-data", "--config", str(cfg)]) == 0
    assert main(["ablate", "--config", str(cfg)]) == 0
    table = (tmp_path / "exp" / "ablation_table.txt").read_text()
    lines = table.strip().splitlines()
    assert len(lines) == 2 + 4  # header, rule, four variant rows
    assert lines[0].split() == ["method", "fgsm", "Clean"]
    names = [ln.split()[0] for ln in lines[2:]]
    assert names == ["baseline", "+consistency", "+replay",
                     "+replay+consistency"]

    summary = json.loads((tmp_path / "exp" / "ablation_summary.json")
                         .read_text())
    assert set(summary["variants"]) == {"baseline", "consistency", "replay",
                                        "full"}
    first = _digest(tmp_path / "exp" / "ablation_summary.json")
    assert main(["ablate", "--config", str(cfg)]) == 0
    assert _digest(tmp_path / "exp" / "ablation_summary.json") == first
