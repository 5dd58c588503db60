"""Staged continual adversarial training.

Stage 0 trains the classifier on clean data and selects the first replay
buffer.  Each later stage t receives a fixed adversarial training set for
one attack family, trains on it with the two-view averaged adversarial
objective, rehearses the replay buffer against the frozen stage-(t-1)
snapshot with the consistency objective, and finally re-selects the buffer
from the union of the old buffer and the stage's data, re-scored under the
just-trained model.

Two switches produce the four ablation variants: ``replay`` gates the
buffer (selection and rehearsal), ``consistency`` gates the teacher term
(applied to rehearsal batches when replay is on, else to the stage data
itself, matching the intended separation of memory and current data).

All randomness is drawn from streams keyed by (master seed, purpose,
stage, epoch, batch), so runs are bit-reproducible and resumable at any
stage boundary.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import tensor as T
from .attacks import AttackSpec
from .consistency import ConsistencyConfig, paired_adversarial_loss, total_loss
from .data import Dataset
from .evaluate import accuracy
from .model import Classifier, SgdState, sgd_step
from .replay import ReplayBuffer, ReplayCandidate, score_pool, select_replay
from .rng import stream, stream_seed


class ScheduleError(ValueError):
    """Invalid schedule structure or missing stage inputs."""


@dataclass(frozen=True)
class StagePlan:
    stage_id: int
    attack_name: str            # "clean" for stage 0
    attack: Optional[AttackSpec]  # None for stage 0
    epochs: int
    learning_rate: float


@dataclass
class Schedule:
    """Stage list plus every knob the loop needs; stage 0 must be clean."""

    stages: list[StagePlan]
    layer_widths: list[int]
    buffer_capacity: int
    consistency: ConsistencyConfig
    replay_views: int
    batch_size: int
    momentum: float
    weight_decay: float
    master_seed: int

    def __post_init__(self):
        ids = [s.stage_id for s in self.stages]
        if ids != list(range(len(self.stages))):
            raise ScheduleError(f"stage ids must be 0..T in order, got {ids}")
        if not self.stages or self.stages[0].attack is not None:
            raise ScheduleError("stage 0 must be the clean stage")
        for s in self.stages[1:]:
            if s.attack is None:
                raise ScheduleError(f"stage {s.stage_id} has no attack spec")
        if self.buffer_capacity < 1:
            raise ScheduleError("buffer capacity must be >= 1")

    @property
    def num_attack_stages(self) -> int:
        return len(self.stages) - 1


@dataclass
class ScheduleData:
    """Datasets a schedule run consumes; train sets are fixed inputs."""

    clean_train: Dataset
    clean_test: Dataset
    stage_train: dict[int, Dataset] = field(default_factory=dict)
    stage_test: dict[int, Dataset] = field(default_factory=dict)

    def validate(self, schedule: Schedule, require_stages: bool = True) -> None:
        if len(self.clean_train) == 0:
            raise ScheduleError("clean training set is empty")
        if not require_stages:
            return
        for s in schedule.stages[1:]:
            ds = self.stage_train.get(s.stage_id)
            if ds is None or len(ds) == 0:
                raise ScheduleError(
                    f"stage {s.stage_id} ({s.attack_name}) has no training set")


@dataclass
class StageReport:
    stage_id: int
    attack_name: str
    per_attack_accuracy: dict[int, float]
    clean_accuracy: float
    loss_trajectory: list[float]
    loss_components: dict[str, list[float]]
    buffer_histogram: dict[int, int]
    batch_sources: list[int]

    def to_dict(self) -> dict:
        return {
            "stage_id": self.stage_id,
            "attack_name": self.attack_name,
            "per_attack_accuracy": {str(k): v
                                    for k, v in self.per_attack_accuracy.items()},
            "clean_accuracy": self.clean_accuracy,
            "loss_trajectory": self.loss_trajectory,
            "loss_components": self.loss_components,
            "buffer_histogram": {str(k): v
                                 for k, v in self.buffer_histogram.items()},
            "batch_sources": self.batch_sources,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StageReport":
        return cls(
            stage_id=d["stage_id"],
            attack_name=d["attack_name"],
            per_attack_accuracy={int(k): v
                                 for k, v in d["per_attack_accuracy"].items()},
            clean_accuracy=d["clean_accuracy"],
            loss_trajectory=list(d["loss_trajectory"]),
            loss_components={k: list(v) for k, v in d["loss_components"].items()},
            buffer_histogram={int(k): v
                              for k, v in d["buffer_histogram"].items()},
            batch_sources=list(d["batch_sources"]),
        )


@dataclass
class ScheduleResult:
    final_model: Classifier
    snapshots: list[Classifier]          # frozen, tagged 0..T
    buffers: dict[int, ReplayBuffer]     # buffer selected after each stage
    reports: list[StageReport]


StageHook = Callable[[int, Classifier, ReplayBuffer, StageReport], None]
LogFn = Callable[[str], None]


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def _train_batch(model: Classifier, x: np.ndarray, y: np.ndarray,
                 teacher: Optional[Classifier], schedule: Schedule,
                 state: SgdState, seed: int) -> dict:
    if teacher is None:
        loss, tape, parts = paired_adversarial_loss(
            model, x, y, schedule.consistency, seed)
    else:
        loss, tape, parts = total_loss(
            teacher, model, x, y, schedule.consistency, seed)
    grads = T.backward(tape, loss)
    sgd_step(model, model.gradients_from(tape, grads), state)
    return parts


def _clean_train_batch(model: Classifier, x: np.ndarray, y: np.ndarray,
                       state: SgdState) -> dict:
    tape = T.Tape()
    loss = T.nll(T.log_softmax(model.logits_on_tape(tape.leaf(x), tape)), y)
    grads = T.backward(tape, loss)
    sgd_step(model, model.gradients_from(tape, grads), state)
    return {"total": float(loss.data), "adv": float(loss.data), "js": 0.0}


def _evaluate_stage(model: Classifier, schedule: Schedule, data: ScheduleData
                    ) -> tuple[dict[int, float], float]:
    per_attack = {sid: accuracy(model, ds)
                  for sid, ds in sorted(data.stage_test.items())}
    return per_attack, accuracy(model, data.clean_test)


def select_buffer(model: Classifier, candidates: list[ReplayCandidate],
                  schedule: Schedule, image_hw: tuple[int, int],
                  stage_id: int) -> ReplayBuffer:
    """Score candidates under ``model`` and keep a strided coreset."""
    xs = np.stack([c.x for c in candidates]) if candidates else np.empty((0, 1))
    ys = np.array([c.label for c in candidates], dtype=np.int64)
    records = score_pool(model, xs, ys, schedule.replay_views,
                         list(schedule.consistency.augmentations), image_hw,
                         seed=stream_seed(schedule.master_seed, "score", stage_id))
    return select_replay(candidates, records, schedule.buffer_capacity)


def run_initial_stage(schedule: Schedule, data: ScheduleData,
                      log: Optional[LogFn] = None
                      ) -> tuple[Classifier, ReplayBuffer, StageReport]:
    """Clean training for stage 0, then the first replay selection."""
    data.validate(schedule, require_stages=False)
    plan = schedule.stages[0]
    model = Classifier.init(schedule.layer_widths,
                            stream(schedule.master_seed, "init"))
    state = SgdState(plan.learning_rate, schedule.momentum,
                     schedule.weight_decay)
    ds = data.clean_train
    trajectory: list[float] = []
    for epoch in range(plan.epochs):
        rng = stream(schedule.master_seed, "shuffle", 0, epoch)
        losses = []
        for idx in _batches(len(ds), schedule.batch_size, rng):
            parts = _clean_train_batch(model, ds.x[idx], ds.y[idx], state)
            losses.append(parts["total"])
        trajectory.append(float(np.mean(losses)))
        if log:
            log(f"stage 0 epoch {epoch}: loss {trajectory[-1]:.4f}")

    candidates = [ReplayCandidate(ds.x[i], int(ds.y[i]), 0, i)
                  for i in range(len(ds))]
    buffer = select_buffer(model, candidates, schedule, ds.image_hw, stage_id=0)
    per_attack, clean = _evaluate_stage(model, schedule, data)
    report = StageReport(0, "clean", per_attack, clean, trajectory,
                         {"total": trajectory, "js": [0.0] * len(trajectory)},
                         buffer.histogram(), [0])
    return model, buffer, report


def run_stage(stage_id: int, model: Classifier, teacher: Classifier,
              buffer: ReplayBuffer, schedule: Schedule, data: ScheduleData,
              replay: bool = True, consistency: bool = True,
              log: Optional[LogFn] = None
              ) -> tuple[Classifier, ReplayBuffer, StageReport]:
    """One adversarial stage: train on the stage set, rehearse the buffer,
    then re-select the buffer under the updated model."""
    plan = schedule.stages[stage_id]
    if teacher is None or not teacher.frozen or teacher.snapshot_tag != stage_id - 1:
        raise ScheduleError(
            f"stage {stage_id} needs the frozen snapshot tagged {stage_id - 1}")
    ds = data.stage_train.get(stage_id)
    if ds is None or len(ds) == 0:
        raise ScheduleError(f"stage {stage_id} training set is empty")

    state = SgdState(plan.learning_rate, schedule.momentum,
                     schedule.weight_decay)
    seed = schedule.master_seed
    trajectory: list[float] = []
    components: dict[str, list[float]] = {"total": [], "js": []}
    sources = {stage_id}
    rehearse = replay and len(buffer) > 0

    for epoch in range(plan.epochs):
        losses, js_vals = [], []
        # current-stage data: teacher enters only when consistency is the
        # stage objective (no replay buffer to carry it)
        stage_teacher = teacher if (consistency and not replay) else None
        rng = stream(seed, "shuffle", stage_id, epoch)
        phase = []
        for b, idx in enumerate(_batches(len(ds), schedule.batch_size, rng)):
            parts = _train_batch(model, ds.x[idx], ds.y[idx], stage_teacher,
                                 schedule, state,
                                 stream_seed(seed, "objective", stage_id, epoch, b))
            phase.append((parts["total"], parts["js"], parts["adv"]))
        losses += [p[0] for p in phase]
        js_vals += [p[1] for p in phase]
        if log:
            log(f"stage {stage_id} epoch {epoch} current-data: "
                f"adv {np.mean([p[2] for p in phase]):.4f} "
                f"js {np.mean([p[1] for p in phase]):.4f}")
        if rehearse:
            bx = np.stack([e.x for e in buffer.entries])
            by = np.array([e.label for e in buffer.entries], dtype=np.int64)
            replay_teacher = teacher if consistency else None
            rng = stream(seed, "shuffle-replay", stage_id, epoch)
            phase = []
            for b, idx in enumerate(_batches(len(buffer), schedule.batch_size, rng)):
                parts = _train_batch(
                    model, bx[idx], by[idx], replay_teacher, schedule, state,
                    stream_seed(seed, "objective-replay", stage_id, epoch, b))
                phase.append((parts["total"], parts["js"], parts["adv"]))
            losses += [p[0] for p in phase]
            js_vals += [p[1] for p in phase]
            if log:
                log(f"stage {stage_id} epoch {epoch} replay: "
                    f"adv {np.mean([p[2] for p in phase]):.4f} "
                    f"js {np.mean([p[1] for p in phase]):.4f}")
        trajectory.append(float(np.mean(losses)))
        components["total"].append(trajectory[-1])
        components["js"].append(float(np.mean(js_vals)))

    if rehearse:
        sources.update(e.source_stage for e in buffer.entries)

    if replay:
        candidates = [ReplayCandidate(e.x, e.label, e.source_stage, e.source_index)
                      for e in buffer.entries]
        candidates += [ReplayCandidate(ds.x[i], int(ds.y[i]), stage_id, i)
                       for i in range(len(ds))]
        next_buffer = select_buffer(model, candidates, schedule, ds.image_hw,
                                    stage_id)
    else:
        next_buffer = buffer

    per_attack, clean = _evaluate_stage(model, schedule, data)
    report = StageReport(stage_id, plan.attack_name, per_attack, clean,
                         trajectory, components, next_buffer.histogram(),
                         sorted(sources))
    return model, next_buffer, report


def run_schedule(schedule: Schedule, data: ScheduleData, replay: bool = True,
                 consistency: bool = True, start_stage: int = 0,
                 initial_model: Optional[Classifier] = None,
                 initial_buffer: Optional[ReplayBuffer] = None,
                 stage_hook: Optional[StageHook] = None,
                 log: Optional[LogFn] = None) -> ScheduleResult:
    """Run stages ``start_stage..T``; resuming needs the previous snapshot
    and the buffer selected after it."""
    data.validate(schedule)
    snapshots: list[Classifier] = []
    reports: list[StageReport] = []
    buffers: dict[int, ReplayBuffer] = {}

    if start_stage == 0:
        model, buffer, report = run_initial_stage(schedule, data, log=log)
        snapshot = model.snapshot(0)
        snapshots.append(snapshot)
        buffers[0] = buffer
        reports.append(report)
        if stage_hook:
            stage_hook(0, snapshot, buffer, report)
    else:
        if initial_model is None or initial_buffer is None:
            raise ScheduleError(
                "resuming needs the previous snapshot and its buffer")
        if initial_model.snapshot_tag != start_stage - 1:
            raise ScheduleError(
                f"resume snapshot tagged {initial_model.snapshot_tag}, "
                f"expected {start_stage - 1}")
        snapshot = initial_model
        model = initial_model.clone()
        buffer = initial_buffer

    for stage_id in range(max(start_stage, 1), len(schedule.stages)):
        teacher = snapshot
        model, buffer, report = run_stage(
            stage_id, model, teacher, buffer, schedule, data, replay=replay,
            consistency=consistency, log=log)
        snapshot = model.snapshot(stage_id)
        snapshots.append(snapshot)
        buffers[stage_id] = buffer
        reports.append(report)
        if stage_hook:
            stage_hook(stage_id, snapshot, buffer, report)

    return ScheduleResult(model, snapshots, buffers, reports)
