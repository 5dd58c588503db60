"""Replay selection by augmentation-vote uncertainty.

Each sample's uncertainty is estimated by classifying several independently
augmented views and voting: with Q_c votes for class c out of Z views, the
score is r = 1 - max_c(Q_c) / Z, zero iff the vote is unanimous and at most
1 - 1/C.  Low scores mark samples near the class distribution core, high
scores mark fragile boundary samples.

The bounded buffer is filled by striding the score-sorted pool at interval
n/K, which spans the whole robust-to-fragile range instead of keeping only
easy or only hard samples.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .augment import AugmentationSpec, augment, draw_spec
from .model import Classifier
from .rng import stream_seed


@dataclass
class UncertaintyRecord:
    sample_index: int
    votes: np.ndarray  # per-class counts, sums to the view count
    score: float
    true_label: int

    @property
    def true_class_votes(self) -> int:
        return int(self.votes[self.true_label])


@dataclass(frozen=True)
class ReplayCandidate:
    """A pool member plus its provenance (stage and row in that stage's set)."""

    x: np.ndarray
    label: int
    source_stage: int
    source_index: int


@dataclass
class ReplayEntry:
    x: np.ndarray
    label: int
    score: float
    source_stage: int
    source_index: int


@dataclass
class ReplayBuffer:
    """At most ``capacity`` entries, kept sorted by score ascending."""

    capacity: int
    entries: list[ReplayEntry] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.entries)

    def histogram(self) -> dict[int, int]:
        """Entry counts by source stage."""
        out: dict[int, int] = {}
        for e in self.entries:
            out[e.source_stage] = out.get(e.source_stage, 0) + 1
        return out

    def scores(self) -> np.ndarray:
        return np.array([e.score for e in self.entries])

    def dump(self, path) -> None:
        """One line per entry: source stage, pool index, label, score (6dp)."""
        with open(path, "w") as fh:
            for e in self.entries:
                fh.write(f"{e.source_stage} {e.source_index} {e.label} "
                         f"{e.score:.6f}\n")

    @staticmethod
    def parse_dump(path) -> list[tuple[int, int, int, float]]:
        rows = []
        with open(path) as fh:
            for line in fh:
                stage, idx, label, score = line.split()
                rows.append((int(stage), int(idx), int(label), float(score)))
        return rows


def _vote(model: Classifier, x: np.ndarray, y: int, views: int,
          aug_pool: list[AugmentationSpec], image_hw: tuple[int, int],
          rng: np.random.Generator) -> np.ndarray:
    batch = np.empty((views, x.size))
    for t in range(views):
        spec = draw_spec(aug_pool, rng)
        batch[t] = augment(x, spec, image_hw, seed=int(rng.integers(0, 2**63)))
    preds = model.predict(batch)
    votes = np.bincount(preds, minlength=model.num_classes)
    return votes


def uncertainty_score(model: Classifier, x: np.ndarray, y: int, views: int,
                      aug_pool: list[AugmentationSpec],
                      image_hw: tuple[int, int], seed: int,
                      sample_index: int = 0) -> UncertaintyRecord:
    """Score one sample: r = 1 - max_c(votes_c) / views."""
    if views < 1:
        raise ValueError(f"view count must be >= 1, got {views}")
    votes = _vote(model, np.asarray(x, dtype=np.float64).ravel(), y, views,
                  aug_pool, image_hw, np.random.default_rng(seed))
    score = 1.0 - votes.max() / views
    return UncertaintyRecord(sample_index, votes, float(score), int(y))


def score_pool(model: Classifier, xs: np.ndarray, ys: np.ndarray, views: int,
               aug_pool: list[AugmentationSpec], image_hw: tuple[int, int],
               seed: int) -> list[UncertaintyRecord]:
    """Score every pool row; sample i uses the derived stream (seed, i)."""
    return [
        uncertainty_score(model, xs[i], int(ys[i]), views, aug_pool, image_hw,
                          seed=stream_seed(seed, "sample", i), sample_index=i)
        for i in range(xs.shape[0])
    ]


def select_replay(candidates: list[ReplayCandidate],
                  records: list[UncertaintyRecord],
                  capacity: int) -> ReplayBuffer:
    """Stride the score-sorted pool: positions floor(i*n/K), i = 0..K-1.

    Ties sort by original pool position; pools no larger than the capacity
    are kept whole.  An empty pool yields an empty buffer.
    """
    if capacity < 1:
        raise ValueError(f"buffer capacity must be >= 1, got {capacity}")
    if len(records) != len(candidates):
        raise ValueError(
            f"{len(records)} records do not cover pool of {len(candidates)}")
    buf = ReplayBuffer(capacity)
    n = len(candidates)
    if n == 0:
        return buf
    order = sorted(range(n), key=lambda i: (records[i].score, i))
    if n > capacity:
        order = [order[(i * n) // capacity] for i in range(capacity)]
    for pos in order:
        cand, rec = candidates[pos], records[pos]
        buf.entries.append(ReplayEntry(cand.x, cand.label, rec.score,
                                       cand.source_stage, cand.source_index))
    return buf
