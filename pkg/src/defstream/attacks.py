"""Gradient-based L-infinity attack families: FGSM, RFGSM, BIM, PGD, MIM.

All attacks maximize the true-label cross-entropy (untargeted), step along
the gradient sign, and project every iterate into the epsilon-ball around
the reference input intersected with the [0, 1] feature range, so the ball
constraint holds after every iteration rather than only at the end.

A handful of published momentum-variant names (nim/sim/dim/vmim) are
accepted as aliases of the momentum family; their extra input transforms
are out of scope here.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import tensor as T
from .backend import kernels as K
from .model import Classifier

FAMILIES = ("fgsm", "rfgsm", "bim", "pgd", "mim")

# Momentum-method variants that differ only by input transforms we do not
# model; they map onto the momentum family so schedules can name them.
FAMILY_ALIASES = {"nim": "mim", "sim": "mim", "dim": "mim", "vmim": "mim"}


class AttackSpecError(ValueError):
    """Attack specification violates its invariants."""


def canonical_family(name: str) -> str:
    fam = name.strip().lower()
    fam = FAMILY_ALIASES.get(fam, fam)
    if fam not in FAMILIES:
        raise AttackSpecError(f"unknown attack family: {name!r}")
    return fam


@dataclass(frozen=True)
class AttackSpec:
    """One attack family with its budget and iteration parameters.

    epsilon == 0 is the documented degenerate no-op budget (alpha 0 allowed
    only then); otherwise 0 < alpha <= epsilon <= 1.
    """

    family: str
    epsilon: float
    alpha: float
    steps: int = 1
    momentum_decay: float = 0.0
    random_start: bool = False

    def __post_init__(self):
        fam = canonical_family(self.family)
        object.__setattr__(self, "family", fam)
        if not 0.0 <= self.epsilon <= 1.0:
            raise AttackSpecError(f"epsilon {self.epsilon} outside [0, 1]")
        if self.epsilon == 0.0:
            if self.alpha != 0.0:
                raise AttackSpecError("alpha must be 0 when epsilon is 0")
        elif not 0.0 < self.alpha <= self.epsilon:
            raise AttackSpecError(
                f"alpha {self.alpha} outside (0, epsilon={self.epsilon}]")
        if self.steps < 1:
            raise AttackSpecError(f"steps must be positive, got {self.steps}")
        if self.momentum_decay < 0:
            raise AttackSpecError("momentum_decay must be non-negative")
        if fam == "fgsm" and (self.steps != 1 or self.random_start):
            raise AttackSpecError("fgsm requires steps == 1 and no random start")


def make_spec(family: str, epsilon: float, alpha: Optional[float] = None,
              steps: Optional[int] = None, momentum_decay: float = 1.0,
              ) -> AttackSpec:
    """Build a spec with the usual per-family defaults.

    fgsm: one deterministic step of size epsilon.  rfgsm: uniform random
    start, one step of epsilon/2.  bim/pgd/mim: 10 steps of alpha (pgd adds
    the random start, mim the gradient momentum).
    """
    fam = canonical_family(family)
    if epsilon == 0.0:
        return AttackSpec(fam, 0.0, 0.0, steps=1)
    if fam == "fgsm":
        return AttackSpec(fam, epsilon, alpha=epsilon, steps=1)
    if fam == "rfgsm":
        return AttackSpec(fam, epsilon, alpha=alpha if alpha else epsilon / 2,
                          steps=steps or 1, random_start=True)
    alpha = alpha if alpha else epsilon / 4
    steps = steps or 10
    if fam == "bim":
        return AttackSpec(fam, epsilon, alpha, steps)
    if fam == "pgd":
        return AttackSpec(fam, epsilon, alpha, steps, random_start=True)
    return AttackSpec(fam, epsilon, alpha, steps, momentum_decay=momentum_decay)


def project_linf(x_adv: np.ndarray, x_ref: np.ndarray, epsilon: float) -> np.ndarray:
    """Clamp into [x_ref - eps, x_ref + eps] intersected with [0, 1]."""
    if x_adv.shape != x_ref.shape:
        raise T.ShapeError(
            f"project_linf: mismatched shapes {x_adv.shape} and {x_ref.shape}")
    out = np.clip(x_adv, x_ref - epsilon, x_ref + epsilon)
    np.clip(out, 0.0, 1.0, out=out)
    return out


def loss_gradient_wrt_input(model: Classifier, x: np.ndarray, y: np.ndarray
                            ) -> tuple[np.ndarray, float]:
    """(d mean-CE / dx, loss value) for a batch.

    Uses the fused backend kernel: the attack loop needs no parameter
    gradients, so the recording tape would be pure overhead here.
    """
    grad, loss = K.mlp_input_grad(model.weights, model.biases, x, y)
    return grad, float(loss)


def generate(spec: AttackSpec, model: Classifier, x: np.ndarray, y: np.ndarray,
             rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Adversarial batch for ``spec``; every iterate satisfies the ball and
    range constraints, and the result never strays more than epsilon from x."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x.reshape(1, -1)
    y = np.asarray(y, dtype=np.intp)
    if spec.epsilon == 0.0:
        return x.copy()

    if spec.random_start:
        if rng is None:
            raise ValueError(f"{spec.family} needs an rng for its random start")
        x_adv = project_linf(
            x + rng.uniform(-spec.epsilon, spec.epsilon, size=x.shape), x,
            spec.epsilon)
    else:
        x_adv = x.copy()

    step_size = spec.epsilon if spec.family == "fgsm" else spec.alpha
    momentum = np.zeros_like(x) if spec.family == "mim" else None

    for _ in range(spec.steps):
        grad, _ = loss_gradient_wrt_input(model, x_adv, y)
        if momentum is not None:
            l1 = np.abs(grad).sum(axis=1, keepdims=True)
            momentum = spec.momentum_decay * momentum + grad / np.maximum(l1, 1e-12)
            direction = np.sign(momentum)
        else:
            direction = np.sign(grad)
        x_adv = project_linf(x_adv + step_size * direction, x, spec.epsilon)
    return x_adv
