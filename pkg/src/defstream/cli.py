"""Command-line front end: gen-data / train / eval / ablate.

gen-data materializes every dataset a run consumes: the clean splits, the
black-box test attack sets (crafted against an independently initialized
surrogate), and the per-stage training attack sets (crafted against the
stage-0 defense model, which the training command reproduces bit-exactly
from the same seed).  train executes the staged schedule for one variant,
writing per-stage checkpoints, buffer dumps, and reports, and can resume
at any stage boundary.  eval scores a checkpoint; ablate runs the full
variant-by-seed grid and emits the comparison table.

Exit codes: 0 success, 2 configuration error, 3 I/O or artifact error,
4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import tensor as T
from .config import (
    ConfigError,
    RunConfig,
    VARIANT_LABELS,
    VARIANT_SWITCHES,
)
from .data import (
    DataFormatError,
    Dataset,
    generate_synthetic,
    load_dataset,
    materialize_attack_set,
    save_dataset,
)
from .evaluate import (
    EvaluationReport,
    accuracy,
    evaluate,
    forgetting_profile,
    format_table,
    load_report,
    report_table,
    save_report,
)
from .model import (
    CheckpointError,
    Classifier,
    SgdState,
    load_checkpoint,
    save_checkpoint,
    sgd_step,
)
from .replay import ReplayBuffer, ReplayEntry
from .rng import stream, stream_seed
from .training import (
    Schedule,
    ScheduleData,
    ScheduleError,
    StageReport,
    run_initial_stage,
    run_schedule,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERIC = 4

log = logging.getLogger("defstream")


# ------------------------------------------------------------------- layout

def data_dir(cfg: RunConfig, seed: int) -> Path:
    return Path(cfg.out_dir) / f"data-seed{seed}"


def run_dir(cfg: RunConfig, seed: int, variant: str) -> Path:
    return Path(cfg.out_dir) / f"run-seed{seed}-{variant}"


def _stage_files(cfg: RunConfig):
    for t, fam in enumerate(cfg.stage_families, start=1):
        yield t, fam, f"adv_train_stage{t}_{fam}.ds", f"adv_test_stage{t}_{fam}.ds"


def attack_column(cfg: RunConfig, stage_id: int) -> str:
    fam = cfg.stage_families[stage_id - 1]
    if cfg.stage_families.count(fam) > 1:
        return f"{fam}#{stage_id}"
    return fam


# ----------------------------------------------------------------- gen-data

def _train_surrogate(cfg: RunConfig, clean_train: Dataset, seed: int
                     ) -> Classifier:
    model = Classifier.init(cfg.layer_widths, stream(seed, "surrogate-init"))
    state = SgdState(cfg.lr_clean, cfg.momentum, cfg.weight_decay)
    for epoch in range(cfg.epochs_clean):
        rng = stream(seed, "surrogate-shuffle", epoch)
        order = rng.permutation(len(clean_train))
        for start in range(0, len(clean_train), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            tape = T.Tape()
            loss = T.nll(T.log_softmax(
                model.logits_on_tape(tape.leaf(clean_train.x[idx]), tape)),
                clean_train.y[idx])
            grads = T.backward(tape, loss)
            sgd_step(model, model.gradients_from(tape, grads), state)
    return model


def cmd_gen_data(cfg: RunConfig, seeds: list[int], force: bool) -> int:
    for seed in seeds:
        out = data_dir(cfg, seed)
        existing = sorted(out.glob("*.ds"))
        if existing and not force:
            raise FileExistsError(
                f"{out} already holds {len(existing)} dataset files; "
                f"pass --force to overwrite")
        out.mkdir(parents=True, exist_ok=True)

        t0 = time.perf_counter()
        clean_train = generate_synthetic(
            cfg.classes, cfg.per_class_train, seed, hw=cfg.image_hw,
            noise=cfg.noise, split="train", name="clean_train")
        clean_test = generate_synthetic(
            cfg.classes, cfg.per_class_test, seed, hw=cfg.image_hw,
            noise=cfg.noise, split="test", name="clean_test")
        save_dataset(clean_train, out / "clean_train.ds")
        save_dataset(clean_test, out / "clean_test.ds")

        surrogate = _train_surrogate(cfg, clean_train, seed).snapshot(0)
        save_checkpoint(surrogate, out / "surrogate.ckpt")

        schedule = cfg.schedule(seed)
        victim_model, _, _ = run_initial_stage(
            schedule, ScheduleData(clean_train, clean_test))
        victim = victim_model.snapshot(0)
        save_checkpoint(victim, out / "victim_stage0.ckpt")

        for t, fam, train_name, test_name in _stage_files(cfg):
            spec = cfg.stage_attack(fam)
            save_dataset(materialize_attack_set(
                spec, victim, clean_train,
                seed=stream_seed(seed, "attack-train", t),
                name=train_name.removesuffix(".ds")), out / train_name)
            save_dataset(materialize_attack_set(
                spec, surrogate, clean_test,
                seed=stream_seed(seed, "attack-test", t),
                name=test_name.removesuffix(".ds")), out / test_name)
        log.info("gen-data seed %d: %d dataset files in %s (%.1fs)", seed,
                 len(list(out.glob("*.ds"))), out, time.perf_counter() - t0)
    return EXIT_OK


# -------------------------------------------------------------------- train

def load_schedule_data(cfg: RunConfig, seed: int) -> ScheduleData:
    base = data_dir(cfg, seed)
    def _load(name: str, split: str) -> Dataset:
        path = base / name
        if not path.exists():
            raise FileNotFoundError(f"missing dataset: {path}")
        return load_dataset(path, split=split)

    data = ScheduleData(_load("clean_train.ds", "train"),
                        _load("clean_test.ds", "test"))
    for t, _, train_name, test_name in _stage_files(cfg):
        data.stage_train[t] = _load(train_name, "train")
        data.stage_test[t] = _load(test_name, "test")
    return data


def rebuild_buffer(path: Path, data: ScheduleData, capacity: int
                   ) -> ReplayBuffer:
    """Reconstruct a dumped buffer; entries reference rows of known sets."""
    buf = ReplayBuffer(capacity)
    for stage, idx, label, score in ReplayBuffer.parse_dump(path):
        ds = data.clean_train if stage == 0 else data.stage_train[stage]
        buf.entries.append(ReplayEntry(ds.x[idx], label, score, stage, idx))
    return buf


def _check_finite(report: StageReport) -> None:
    if not all(math.isfinite(v) for v in report.loss_trajectory):
        raise FloatingPointError(
            f"non-finite training loss in stage {report.stage_id}")


def _final_eval(cfg: RunConfig, seed: int, data: ScheduleData,
                model: Classifier, reports: list[StageReport]
                ) -> EvaluationReport:
    test_sets = {attack_column(cfg, t): data.stage_test[t]
                 for t in sorted(data.stage_test)}
    result = evaluate(model, test_sets, data.clean_test, seeds=[seed])
    if len(reports) >= 2:
        profile = forgetting_profile(reports)
        result.forgetting = {attack_column(cfg, t): v
                             for t, v in profile.items()}
    return result


def cmd_train(cfg: RunConfig, seed: int, start_stage: int = 0) -> int:
    out = run_dir(cfg, seed, cfg.variant)
    out.mkdir(parents=True, exist_ok=True)
    handler = logging.FileHandler(out / "run.log")
    handler.setFormatter(logging.Formatter("%(asctime)s %(message)s"))
    log.addHandler(handler)
    try:
        (out / "config.resolved.cfg").write_text(cfg.resolved_text(seed))
        data = load_schedule_data(cfg, seed)
        schedule = cfg.schedule(seed)

        reports: dict[int, StageReport] = {}

        def hook(stage_id: int, snapshot: Classifier, buffer: ReplayBuffer,
                 report: StageReport) -> None:
            _check_finite(report)
            save_checkpoint(snapshot, out / f"stage_{stage_id}.ckpt")
            buffer.dump(out / f"buffer_after_stage{stage_id}.txt")
            (out / f"report_stage{stage_id}.json").write_text(
                json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
            reports[stage_id] = report
            log.info("seed %d stage %d (%s): clean %.4f", seed, stage_id,
                     report.attack_name, report.clean_accuracy)

        kwargs = {}
        if start_stage > 0:
            prev = start_stage - 1
            ckpt = out / f"stage_{prev}.ckpt"
            dump = out / f"buffer_after_stage{prev}.txt"
            if not ckpt.exists() or not dump.exists():
                raise FileNotFoundError(
                    f"cannot resume at stage {start_stage}: need {ckpt} and "
                    f"{dump}")
            kwargs["initial_model"] = load_checkpoint(ckpt)
            kwargs["initial_buffer"] = rebuild_buffer(dump, data, cfg.capacity)
            for t in range(start_stage):
                rpath = out / f"report_stage{t}.json"
                if rpath.exists():
                    reports[t] = StageReport.from_dict(
                        json.loads(rpath.read_text()))

        t0 = time.perf_counter()
        result = run_schedule(
            schedule, data, replay=cfg.replay, consistency=cfg.consistency,
            start_stage=start_stage, stage_hook=hook,
            log=lambda msg: log.info("seed %d %s", seed, msg), **kwargs)
        ordered = [reports[t] for t in sorted(reports)]
        final = _final_eval(cfg, seed, data, result.final_model, ordered)
        save_report(final, out / "eval_report.json")
        (out / "eval_report.txt").write_text(report_table(final))
        log.info("seed %d variant %s done in %.1fs: clean %.4f", seed,
                 cfg.variant, time.perf_counter() - t0, final.clean_accuracy)
        return EXIT_OK
    finally:
        log.removeHandler(handler)
        handler.close()


# --------------------------------------------------------------------- eval

def cmd_eval(cfg: RunConfig, checkpoint: str, seed: int,
             out_path: Path | None = None) -> int:
    model = load_checkpoint(checkpoint)
    data = load_schedule_data(cfg, seed)
    test_sets = {attack_column(cfg, t): data.stage_test[t]
                 for t in sorted(data.stage_test)}
    result = evaluate(model, test_sets, data.clean_test, seeds=[seed])
    out = out_path or Path(checkpoint).with_suffix(".eval.json")
    save_report(result, out)
    Path(str(out).removesuffix(".json") + ".txt").write_text(
        report_table(result))
    print(report_table(result), end="")
    return EXIT_OK


# ------------------------------------------------------------------- ablate

def cmd_ablate(cfg: RunConfig, seeds: list[int]) -> int:
    t0 = time.perf_counter()
    columns = [attack_column(cfg, t)
               for t in range(1, len(cfg.stage_families) + 1)] + ["Clean"]
    per_variant: dict[str, dict] = {}
    for variant, (replay_on, consistency_on) in VARIANT_SWITCHES.items():
        runs = []
        for seed in seeds:
            vcfg = RunConfig(**{**cfg.__dict__, "replay": replay_on,
                                "consistency": consistency_on})
            code = cmd_train(vcfg, seed)
            if code != EXIT_OK:
                return code
            runs.append(load_report(
                run_dir(cfg, seed, variant) / "eval_report.json"))
        per_variant[variant] = {
            "per_attack": {c: float(np.mean([r.per_attack_accuracy[c]
                                             for r in runs]))
                           for c in columns[:-1]},
            "clean": float(np.mean([r.clean_accuracy for r in runs])),
            "mean_forgetting": float(np.mean(
                [np.mean(list(r.forgetting.values())) for r in runs])),
            "seeds": list(seeds),
        }

    rows = {VARIANT_LABELS[v]: {**d["per_attack"], "Clean": d["clean"]}
            for v, d in per_variant.items()}
    table = format_table(rows, columns)
    summary = {
        "columns": columns,
        "variants": per_variant,
        "gaps": {
            "clean_full_minus_baseline":
                per_variant["full"]["clean"] - per_variant["baseline"]["clean"],
            "stage1_full_minus_baseline":
                per_variant["full"]["per_attack"][columns[0]]
                - per_variant["baseline"]["per_attack"][columns[0]],
            "forgetting_full_minus_baseline":
                per_variant["full"]["mean_forgetting"]
                - per_variant["baseline"]["mean_forgetting"],
        },
    }
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "ablation_summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n")
    (out / "ablation_table.txt").write_text(table)
    print(table, end="")
    log.info("ablation grid (%d variants x %d seeds) in %.1fs",
             len(per_variant), len(seeds), time.perf_counter() - t0)
    return EXIT_OK


# --------------------------------------------------------------------- main

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="defstream",
        description="continual adversarial-training laboratory")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="config file path")
        p.add_argument("--out", help="override [run] out directory")
        p.add_argument("--seed", type=int, help="single seed override")

    p = sub.add_parser("gen-data", help="write base and per-stage attack sets")
    common(p)
    p.add_argument("--force", action="store_true",
                   help="overwrite existing dataset files")

    p = sub.add_parser("train", help="run the staged schedule for one variant")
    common(p)
    p.add_argument("--stage", type=int, default=0,
                   help="resume at this stage (needs prior artifacts)")

    p = sub.add_parser("eval", help="evaluate a checkpoint on the test sets")
    common(p)
    p.add_argument("--checkpoint", required=True)

    p = sub.add_parser("ablate", help="run the full variant-by-seed grid")
    common(p)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if not log.handlers:
        logging.basicConfig(level=logging.INFO, format="%(message)s")
    try:
        cfg = RunConfig.from_file(args.config)
        if args.out:
            cfg.out_dir = args.out
        seeds = [args.seed] if args.seed is not None else cfg.seeds
        if args.command == "gen-data":
            return cmd_gen_data(cfg, seeds, force=args.force)
        if args.command == "train":
            for seed in seeds:
                code = cmd_train(cfg, seed, start_stage=args.stage)
                if code != EXIT_OK:
                    return code
            return EXIT_OK
        if args.command == "eval":
            return cmd_eval(cfg, args.checkpoint, seeds[0])
        return cmd_ablate(cfg, seeds)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except (OSError, DataFormatError, CheckpointError, ScheduleError) as exc:
        log.error("artifact error: %s", exc)
        return EXIT_IO
    except (FloatingPointError, ArithmeticError) as exc:
        log.error("numeric failure: %s", exc)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
