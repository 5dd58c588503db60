"""Feedforward classifier, SGD-with-momentum optimizer, and checkpoints.

The defended model is a small relu MLP over flattened inputs in [0, 1].
Stage snapshots are frozen copies tagged with the stage index; frozen
parameters are never mutated, which the parameter hash makes checkable.
"""

from __future__ import annotations

import hashlib
import io
import struct
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .backend import kernels as K

CHECKPOINT_MAGIC = b"DFSM"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    """Malformed or incompatible checkpoint file."""


class FrozenModelError(RuntimeError):
    """Attempted to mutate a frozen snapshot."""


def _glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    s = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-s, s, size=(fan_in, fan_out))


@dataclass
class Classifier:
    """MLP parameters plus the stage tag of the snapshot that produced them."""

    layer_widths: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    snapshot_tag: int = -1
    frozen: bool = False

    @classmethod
    def init(cls, layer_widths: list[int], rng: np.random.Generator) -> "Classifier":
        if len(layer_widths) < 2 or any(w <= 0 for w in layer_widths):
            raise ValueError(f"bad layer widths: {layer_widths}")
        weights, biases = [], []
        for fan_in, fan_out in zip(layer_widths, layer_widths[1:]):
            weights.append(_glorot_uniform(rng, fan_in, fan_out))
            biases.append(np.zeros(fan_out))
        return cls(list(layer_widths), weights, biases)

    @property
    def num_classes(self) -> int:
        return self.layer_widths[-1]

    @property
    def input_dim(self) -> int:
        return self.layer_widths[0]

    def parameters(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def snapshot(self, tag: int) -> "Classifier":
        """Frozen deep copy tagged with the producing stage index."""
        return Classifier(
            list(self.layer_widths),
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            snapshot_tag=tag,
            frozen=True,
        )

    def clone(self) -> "Classifier":
        return Classifier(
            list(self.layer_widths),
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            snapshot_tag=self.snapshot_tag,
            frozen=False,
        )

    def param_hash(self) -> str:
        h = hashlib.sha256()
        for p in self.parameters():
            h.update(np.ascontiguousarray(p).tobytes())
        return h.hexdigest()

    # ------------------------------------------------------------- forward

    def _check_input(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            x = x.reshape(1, -1)
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise T.ShapeError(
                f"predict: expected features (*, {self.input_dim}), got {x.shape}")
        return x

    def logits(self, x: np.ndarray) -> np.ndarray:
        """Raw logits, (batch, classes); no tape recording (inference path)."""
        h = self._check_input(x)
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = K.add_bias(K.matmul(h, w), b)
            if i != last:
                h = K.relu(h)
        return h

    def logits_on_tape(self, x: T.Tensor, tape: T.Tape) -> T.Tensor:
        """Differentiable forward; parameters become leaves on ``tape`` once."""
        nodes = self.param_leaves(tape)
        h = x
        last = len(self.weights) - 1
        for i in range(len(self.weights)):
            h = T.add_bias(T.matmul(h, nodes[2 * i]), nodes[2 * i + 1])
            if i != last:
                h = T.relu(h)
        return h

    def param_leaves(self, tape: T.Tape) -> list[T.Tensor]:
        """Leaf tensors for the parameters, created once per (model, tape)."""
        cache = tape._model_leaves
        key = id(self)
        if key not in cache:
            cache[key] = [tape.leaf(p) for p in self.parameters()]
        return cache[key]

    def gradients_from(self, tape: T.Tape, grad_map: dict[int, np.ndarray]
                       ) -> list[np.ndarray]:
        """Per-parameter gradients in parameters() order."""
        leaves = self.param_leaves(tape)
        return [grad_map[t.node_id] for t in leaves]

    def predict_proba(self, x: np.ndarray, tau: float = 1.0) -> np.ndarray:
        """softmax(logits / tau); rows sum to 1; argmax matches raw logits."""
        if tau <= 0:
            raise ValueError(f"temperature must be positive, got {tau}")
        z = self.logits(x) / tau
        return np.exp(K.log_softmax(z))

    def predict(self, x: np.ndarray) -> np.ndarray:
        """Argmax class per row; ties break to the lowest class index."""
        return self.logits(x).argmax(axis=1)


def cross_entropy(model: Classifier, x: np.ndarray, y: np.ndarray) -> float:
    logp = K.log_softmax(model.logits(x))
    return K.nll_mean(logp, np.asarray(y, dtype=np.intp))


@dataclass
class SgdState:
    """Momentum buffers plus hyperparameters; velocity mirrors parameter shapes."""

    learning_rate: float
    momentum: float = 0.9
    weight_decay: float = 0.0
    velocity: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight decay must be non-negative")


def sgd_step(model: Classifier, grads: list[np.ndarray], state: SgdState) -> None:
    """v <- momentum*v + grad + wd*param; param <- param - lr*v (in place)."""
    if model.frozen:
        raise FrozenModelError(
            f"cannot update frozen snapshot tagged {model.snapshot_tag}")
    params = model.parameters()
    if len(grads) != len(params):
        raise ValueError(
            f"gradient count {len(grads)} does not cover {len(params)} parameters")
    if not state.velocity:
        state.velocity = [np.zeros_like(p) for p in params]
    for p, g, v in zip(params, grads, state.velocity):
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter {p.shape}")
        v *= state.momentum
        v += g
        if state.weight_decay:
            v += state.weight_decay * p
        p -= state.learning_rate * v


# ---------------------------------------------------------------- checkpoints

def save_checkpoint(model: Classifier, path) -> None:
    """magic, version, widths, snapshot tag, then parameters as LE float64."""
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<i", CHECKPOINT_VERSION))
    buf.write(struct.pack("<i", len(model.layer_widths)))
    buf.write(struct.pack(f"<{len(model.layer_widths)}i", *model.layer_widths))
    buf.write(struct.pack("<i", model.snapshot_tag))
    for p in model.parameters():
        buf.write(np.ascontiguousarray(p, dtype="<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_checkpoint(path) -> Classifier:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: bad magic {raw[:4]!r}")
    (version,) = struct.unpack_from("<i", raw, 4)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path}: checkpoint version {version}, expected {CHECKPOINT_VERSION}")
    (nw,) = struct.unpack_from("<i", raw, 8)
    widths = list(struct.unpack_from(f"<{nw}i", raw, 12))
    (tag,) = struct.unpack_from("<i", raw, 12 + 4 * nw)
    offset = 16 + 4 * nw
    weights, biases = [], []
    for fan_in, fan_out in zip(widths, widths[1:]):
        n = fan_in * fan_out
        w = np.frombuffer(raw, dtype="<f8", count=n, offset=offset).reshape(
            fan_in, fan_out).copy()
        offset += 8 * n
        b = np.frombuffer(raw, dtype="<f8", count=fan_out, offset=offset).copy()
        offset += 8 * fan_out
        weights.append(w)
        biases.append(b)
    if offset != len(raw):
        raise CheckpointError(f"{path}: trailing bytes after parameters")
    return Classifier(widths, weights, biases, snapshot_tag=tag, frozen=True)
