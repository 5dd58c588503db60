"""Final-model evaluation, forgetting diagnostics, and report serialization.

Accuracy is the fraction of argmax-correct predictions on a frozen test
set.  Forgetting for a stage is its best-ever accuracy (at any checkpoint
from that stage on) minus its final accuracy, so a value of zero means the
defense never lost ground on that attack.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .data import Dataset
from .model import Classifier


@dataclass
class EvaluationReport:
    per_attack_accuracy: dict[str, float]
    clean_accuracy: float
    forgetting: dict[str, float] = field(default_factory=dict)
    seeds: list[int] = field(default_factory=list)
    runtime_seconds: float = 0.0

    def to_dict(self) -> dict:
        return {
            "per_attack_accuracy": self.per_attack_accuracy,
            "clean_accuracy": self.clean_accuracy,
            "forgetting": self.forgetting,
            "seeds": self.seeds,
            "runtime_seconds": self.runtime_seconds,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvaluationReport":
        return cls(
            per_attack_accuracy=dict(d["per_attack_accuracy"]),
            clean_accuracy=d["clean_accuracy"],
            forgetting=dict(d.get("forgetting", {})),
            seeds=list(d.get("seeds", [])),
            runtime_seconds=d.get("runtime_seconds", 0.0),
        )


def accuracy(model: Classifier, ds: Dataset) -> float:
    """Fraction of argmax matches; the re-checkable counting definition."""
    if len(ds) == 0:
        raise ValueError(f"test set {ds.name} is empty")
    return float((model.predict(ds.x) == ds.y).mean())


def evaluate(model: Classifier, test_sets: dict[str, Dataset],
             clean_test: Dataset, seeds: list[int] | None = None
             ) -> EvaluationReport:
    """Accuracy per attack set plus clean accuracy, after all stages."""
    per_attack = {name: accuracy(model, ds) for name, ds in test_sets.items()}
    return EvaluationReport(per_attack, accuracy(model, clean_test),
                            seeds=seeds or [])


def forgetting_profile(stage_reports) -> dict[int, float]:
    """Best-ever minus final accuracy per attack stage.

    ``stage_reports`` carry, for every stage-end checkpoint, the accuracies
    on all stage test sets; best-ever ranges over every checkpoint from
    deployment on, so ground the initial model already held on a threat
    counts as ground that can be lost.
    """
    if len(stage_reports) < 2:
        raise ValueError("forgetting needs at least two stage reports")
    final = stage_reports[-1]
    out: dict[int, float] = {}
    for s in sorted(final.per_attack_accuracy):
        ever = [r.per_attack_accuracy[s] for r in stage_reports
                if s in r.per_attack_accuracy]
        out[s] = max(ever) - final.per_attack_accuracy[s]
    return out


def save_report(report: EvaluationReport, path) -> None:
    with open(path, "w") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_report(path) -> EvaluationReport:
    with open(path) as fh:
        return EvaluationReport.from_dict(json.load(fh))


def format_table(rows: dict[str, dict[str, float]], columns: list[str]) -> str:
    """Aligned accuracy table: one row per method, attack columns then Clean."""
    width = max([len(c) for c in columns] + [8])
    name_w = max([len(r) for r in rows] + [8])
    header = "method".ljust(name_w) + "".join(c.rjust(width + 2) for c in columns)
    lines = [header, "-" * len(header)]
    for name, vals in rows.items():
        cells = "".join(f"{100 * vals.get(c, float('nan')):{width + 2}.2f}"
                        for c in columns)
        lines.append(name.ljust(name_w) + cells)
    return "\n".join(lines) + "\n"


def report_table(report: EvaluationReport) -> str:
    columns = list(report.per_attack_accuracy) + ["Clean"]
    row = dict(report.per_attack_accuracy)
    row["Clean"] = report.clean_accuracy
    return format_table({"model": row}, columns)
