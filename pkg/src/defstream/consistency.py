"""Consistency regularization against the previous stage's frozen model.

The training objective on a batch is

    0.5 * (CE_teacher(view1) + CE_student(view2))
        + lambda * JS(teacher_probs(view1) || student_probs(view2))

where the two views are independent augmentations of the batch, each
perturbed by an adversarial delta generated against the *current* model,
and both probability vectors are temperature-scaled before the divergence.
The teacher half of the cross-entropy is reported in the loss value but is
constant in the optimization: gradients flow only into the student.

The plain two-view objective (current model in both halves, no divergence
term) is what stages train with on their own attack data.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .attacks import AttackSpec, generate
from .augment import AugmentationSpec, augment, default_pool, draw_spec
from .backend import kernels as K
from .model import Classifier
from .rng import stream


@dataclass(frozen=True)
class ConsistencyConfig:
    """Temperature, regularizer weight, inner attack, and view sampling."""

    tau: float = 0.5
    weight: float = 1.0
    attack: AttackSpec = field(
        default_factory=lambda: AttackSpec("pgd", 8 / 255, 2 / 255, steps=10,
                                           random_start=True))
    augmentations: tuple[AugmentationSpec, ...] = field(
        default_factory=lambda: tuple(default_pool()))
    image_hw: tuple[int, int] = (8, 8)

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError(f"temperature must be positive, got {self.tau}")
        if self.weight < 0:
            raise ValueError(f"weight must be non-negative, got {self.weight}")


def js_divergence(p: np.ndarray, q: np.ndarray) -> float:
    """Jensen-Shannon divergence of two probability vectors, natural log.

    0.5*KL(p||m) + 0.5*KL(q||m) with m = (p+q)/2; symmetric, in [0, ln 2].
    """
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape or p.ndim != 1:
        raise ValueError(f"js_divergence: bad shapes {p.shape}, {q.shape}")
    for name, v in (("p", p), ("q", q)):
        if (v < 0).any():
            raise ValueError(f"js_divergence: {name} has negative mass")
        if abs(v.sum() - 1.0) > 1e-9:
            raise ValueError(f"js_divergence: {name} sums to {v.sum()!r}, not 1")
    m = 0.5 * (p + q)
    with np.errstate(divide="ignore", invalid="ignore"):
        term_p = np.where(p > 0, p * (np.log(p) - np.log(m)), 0.0)
        term_q = np.where(q > 0, q * (np.log(q) - np.log(m)), 0.0)
    return float(0.5 * (term_p.sum() + term_q.sum()))


def _as_batch(x: np.ndarray, y) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x.reshape(1, -1)
    y = np.atleast_1d(np.asarray(y, dtype=np.intp))
    return x, y


def _augment_batch(x: np.ndarray, cfg: ConsistencyConfig, seed: int,
                   view: int) -> np.ndarray:
    rng = stream(seed, "view-aug", view)
    out = np.empty_like(x)
    for i in range(x.shape[0]):
        spec = draw_spec(list(cfg.augmentations), rng)
        out[i] = augment(x[i], spec, cfg.image_hw,
                         seed=int(rng.integers(0, 2**63)))
    return out


def adversarial_views(delta_model: Classifier, x: np.ndarray, y: np.ndarray,
                      cfg: ConsistencyConfig, seed: int
                      ) -> tuple[np.ndarray, np.ndarray]:
    """Two independently augmented views, each with its own adversarial
    perturbation generated against ``delta_model``.

    The views are stacked into one attack batch: the per-row recurrences
    are independent, so this only batches the gradient calls.
    """
    aug = np.vstack([_augment_batch(x, cfg, seed, 1),
                     _augment_batch(x, cfg, seed, 2)])
    adv = generate(cfg.attack, delta_model, aug, np.concatenate([y, y]),
                   rng=stream(seed, "view-delta", 0))
    n = x.shape[0]
    return adv[:n], adv[n:]


def _student_log_probs(model: Classifier, x_adv: np.ndarray, tau: float,
                       tape: T.Tape) -> T.Tensor:
    logits = model.logits_on_tape(tape.leaf(x_adv), tape)
    return T.log_softmax(T.scale(logits, 1.0 / tau))


def _teacher_log_probs(model: Classifier, x_adv: np.ndarray, tau: float
                       ) -> np.ndarray:
    return K.log_softmax(model.logits(x_adv) / tau)


def paired_adversarial_loss(model: Classifier, x: np.ndarray, y,
                            cfg: ConsistencyConfig, seed: int
                            ) -> tuple[T.Tensor, T.Tape, dict]:
    """Two-view averaged adversarial cross-entropy, current model both halves."""
    x, y = _as_batch(x, y)
    x1, x2 = adversarial_views(model, x, y, cfg, seed)
    tape = T.Tape()
    ce1 = T.nll(T.log_softmax(model.logits_on_tape(tape.leaf(x1), tape)), y)
    ce2 = T.nll(T.log_softmax(model.logits_on_tape(tape.leaf(x2), tape)), y)
    loss = T.scale(T.add(ce1, ce2), 0.5)
    parts = {"adv_view1": float(ce1.data), "adv_view2": float(ce2.data),
             "adv": float(loss.data), "js": 0.0, "total": float(loss.data)}
    return loss, tape, parts


def consistency_loss(teacher: Classifier, student: Classifier, x: np.ndarray, y,
                     cfg: ConsistencyConfig, seed: int
                     ) -> tuple[T.Tensor, T.Tape, dict]:
    """Temperature-scaled JS between teacher on view 1 and student on view 2.

    Differentiable with respect to the student only; the teacher parameters
    are registered on the tape so backward reports their (exactly zero)
    gradients.
    """
    if not teacher.frozen:
        raise ValueError("teacher must be a frozen snapshot")
    x, y = _as_batch(x, y)
    x1, x2 = adversarial_views(student, x, y, cfg, seed)
    tape = T.Tape()
    teacher.param_leaves(tape)  # disconnected leaves: zero grads, auditable
    lp = T.constant(_teacher_log_probs(teacher, x1, cfg.tau))
    lq = _student_log_probs(student, x2, cfg.tau, tape)
    loss = T.js_logprob(lp, lq)
    parts = {"js": float(loss.data), "total": float(loss.data)}
    return loss, tape, parts


def total_loss(teacher: Classifier, student: Classifier, x: np.ndarray, y,
               cfg: ConsistencyConfig, seed: int
               ) -> tuple[T.Tensor, T.Tape, dict]:
    """Averaged adversarial cross-entropy plus the weighted consistency term.

    The teacher's cross-entropy half enters the reported value as a constant
    (no parameter gradient); both deltas are generated against the student.
    """
    if not teacher.frozen:
        raise ValueError("teacher must be a frozen snapshot")
    x, y = _as_batch(x, y)
    x1, x2 = adversarial_views(student, x, y, cfg, seed)

    ce_teacher = K.nll_mean(_teacher_log_probs(teacher, x1, 1.0), y)

    tape = T.Tape()
    teacher.param_leaves(tape)
    ce_student = T.nll(
        T.log_softmax(student.logits_on_tape(tape.leaf(x2), tape)), y)
    loss = T.scale(T.add(ce_student, T.constant(ce_teacher)), 0.5)

    lp = T.constant(_teacher_log_probs(teacher, x1, cfg.tau))
    lq = _student_log_probs(student, x2, cfg.tau, tape)
    js_term = T.js_logprob(lp, lq)
    if cfg.weight > 0:
        loss = T.add(loss, T.scale(js_term, cfg.weight))

    parts = {"adv_teacher": float(ce_teacher),
             "adv_student": float(ce_student.data),
             "adv": 0.5 * (float(ce_teacher) + float(ce_student.data)),
             "js": float(js_term.data), "total": float(loss.data)}
    return loss, tape, parts
