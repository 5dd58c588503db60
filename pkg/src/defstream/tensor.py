"""Dense float64 tensors with tape-based reverse-mode differentiation.

A :class:`Tape` records every operation whose inputs include a recorded
tensor; :func:`backward` replays the tape once and returns one gradient per
leaf (zeros for leaves that do not influence the root).  Gradients are taken
with respect to any leaf, which is what both training (parameters) and
attack generation (inputs) need.

The primitive set is deliberately small and auditable: matmul, bias add,
relu, row-wise log-softmax, mean negative log-likelihood, elementwise
add/sub/mul/scale, sum/mean reductions, and a fused Jensen-Shannon
divergence over log-probabilities.  Heavy math is delegated to the kernel
backend selected in :mod:`defstream.backend`.

Tapes are single-threaded; tensors without a tape handle are immutable
values and safe to share.
"""

from __future__ import annotations

from typing import Callable, Optional

import numpy as np

from .backend import kernels as K


class ShapeError(ValueError):
    """Operand shapes do not conform to an operation's shape rule."""


class TapeError(RuntimeError):
    """Tape misuse: non-scalar root, empty tape, or mixing tapes."""


def _as_f64(value) -> np.ndarray:
    arr = np.array(value, dtype=np.float64, order="C", copy=True)
    return arr


class Tensor:
    """A float64 array, optionally recorded on a tape as node ``node_id``."""

    __slots__ = ("data", "tape", "node_id")

    def __init__(self, data: np.ndarray, tape: Optional["Tape"] = None,
                 node_id: Optional[int] = None):
        self.data = data
        self.tape = tape
        self.node_id = node_id

    @property
    def shape(self):
        return self.data.shape

    @property
    def recorded(self) -> bool:
        return self.node_id is not None

    def __repr__(self):
        tag = f", node={self.node_id}" if self.recorded else ""
        return f"Tensor(shape={self.data.shape}{tag})"


def constant(value) -> Tensor:
    """A value tensor with no tape handle; backward treats it as fixed."""
    return Tensor(_as_f64(value))


class Tape:
    """Append-only record of operations, in topological order by construction."""

    __slots__ = ("_parents", "_backwards", "_names", "_leaf_ids", "_leaf_shapes",
                 "_model_leaves")

    def __init__(self):
        self._parents: list[tuple] = []
        self._backwards: list[Optional[Callable]] = []
        self._names: list[str] = []
        self._leaf_ids: list[int] = []
        self._leaf_shapes: list[tuple] = []
        self._model_leaves: dict = {}  # per-model parameter leaf cache

    def __len__(self) -> int:
        return len(self._parents)

    @property
    def leaf_ids(self) -> tuple[int, ...]:
        return tuple(self._leaf_ids)

    def leaf(self, value) -> Tensor:
        """Record ``value`` as a differentiable leaf and return its tensor."""
        data = _as_f64(value)
        nid = self._append((), None, "leaf")
        self._leaf_ids.append(nid)
        self._leaf_shapes.append(data.shape)
        return Tensor(data, self, nid)

    def _append(self, parents: tuple, backward_fn: Optional[Callable],
                name: str) -> int:
        nid = len(self._parents)
        self._parents.append(parents)
        self._backwards.append(backward_fn)
        self._names.append(name)
        return nid


def backward(tape: Tape, root: Tensor) -> dict[int, np.ndarray]:
    """Reverse pass from ``root``; returns {leaf id: gradient array}.

    Every leaf recorded on the tape gets exactly one entry; leaves that do
    not reach the root get zeros of their shape.
    """
    if len(tape) == 0:
        raise TapeError("backward: tape is empty")
    if root.tape is not tape or root.node_id is None:
        raise TapeError("backward: root is not recorded on this tape")
    if root.data.shape != ():
        raise TapeError(
            f"backward: root must be a scalar, got shape {root.data.shape}")

    adjoints: dict[int, np.ndarray] = {root.node_id: np.ones((), dtype=np.float64)}
    parents = tape._parents
    backwards = tape._backwards
    for nid in range(root.node_id, -1, -1):
        g = adjoints.pop(nid, None)
        if g is None:
            continue
        fn = backwards[nid]
        if fn is None:
            adjoints[nid] = g  # leaf: keep for the result map
            continue
        for pid, pg in zip(parents[nid], fn(g)):
            if pid is None:
                continue
            acc = adjoints.get(pid)
            adjoints[pid] = pg if acc is None else acc + pg

    grads: dict[int, np.ndarray] = {}
    for lid, lshape in zip(tape._leaf_ids, tape._leaf_shapes):
        if lid in adjoints and lid <= root.node_id:
            grads[lid] = np.asarray(adjoints[lid], dtype=np.float64)
        else:
            grads[lid] = np.zeros(lshape, dtype=np.float64)
    return grads


def _tape_of(*tensors: Tensor) -> Optional[Tape]:
    tape = None
    for t in tensors:
        if t.tape is not None and t.node_id is not None:
            if tape is None:
                tape = t.tape
            elif tape is not t.tape:
                raise TapeError("operands recorded on different tapes")
    return tape


def _emit(name: str, out_data: np.ndarray, inputs: tuple[Tensor, ...],
          backward_fn: Optional[Callable]) -> Tensor:
    tape = _tape_of(*inputs)
    if tape is None:
        return Tensor(out_data)
    parent_ids = tuple(t.node_id if t.tape is tape else None for t in inputs)
    nid = tape._append(parent_ids, backward_fn, name)
    return Tensor(out_data, tape, nid)


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else constant(x)


# ---------------------------------------------------------------- primitives

def matmul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    ad, bd = a.data, b.data
    vector_rhs = bd.ndim == 1
    if ad.ndim != 2 or bd.ndim not in (1, 2) or ad.shape[1] != bd.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {ad.shape} by {bd.shape}")
    b2 = bd.reshape(-1, 1) if vector_rhs else bd
    out = K.matmul(ad, b2)

    def bw(g):
        g2 = g.reshape(ad.shape[0], 1) if vector_rhs else g
        ga = K.matmul_grad_a(g2, b2)
        gb = K.matmul_grad_b(ad, g2)
        return ga, (gb.ravel() if vector_rhs else gb)

    return _emit("matmul", out.ravel() if vector_rhs else out, (a, b), bw)


def add_bias(m, bias) -> Tensor:
    m, bias = _lift(m), _lift(bias)
    md, bd = m.data, bias.data
    if md.ndim != 2 or bd.ndim != 1 or md.shape[1] != bd.shape[0]:
        raise ShapeError(f"add_bias: cannot add bias {bd.shape} to {md.shape}")
    out = K.add_bias(md, bd)

    def bw(g):
        return g, K.bias_grad(g)

    return _emit("add_bias", out, (m, bias), bw)


def relu(x) -> Tensor:
    x = _lift(x)
    xd = x.data
    out = K.relu(xd)

    def bw(g):
        return (K.relu_grad(g, xd),)

    return _emit("relu", out, (x,), bw)


def log_softmax(z) -> Tensor:
    z = _lift(z)
    zd = z.data
    if zd.ndim not in (1, 2):
        raise ShapeError(f"log_softmax: expected 1-D or 2-D logits, got {zd.shape}")
    out = K.log_softmax(zd)

    def bw(g):
        return (K.log_softmax_grad(g, out),)

    return _emit("log_softmax", out, (z,), bw)


def nll(logp, labels) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under log-probs."""
    logp = _lift(logp)
    ld = logp.data
    lab = np.asarray(labels, dtype=np.intp)
    if ld.ndim != 2 or lab.ndim != 1 or lab.shape[0] != ld.shape[0]:
        raise ShapeError(
            f"nll: expected log-probs (B, C) with labels (B,), got {ld.shape} "
            f"and {lab.shape}")
    if lab.size and (lab.min() < 0 or lab.max() >= ld.shape[1]):
        raise ShapeError(f"nll: label out of range for {ld.shape[1]} classes")
    out = np.asarray(K.nll_mean(ld, lab))

    def bw(g):
        return (K.nll_mean_grad(float(g), ld, lab),)

    return _emit("nll", out, (logp,), bw)


def js_logprob(lp, lq) -> Tensor:
    """Mean Jensen-Shannon divergence between rows of two log-prob tensors."""
    lp, lq = _lift(lp), _lift(lq)
    pd, qd = lp.data, lq.data
    if pd.shape != qd.shape or pd.ndim not in (1, 2):
        raise ShapeError(f"js_logprob: mismatched shapes {pd.shape} and {qd.shape}")
    out = np.asarray(K.js_mean(pd, qd))

    def bw(g):
        return K.js_mean_grad(float(g), pd, qd)

    return _emit("js_logprob", out, (lp, lq), bw)


def add(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    if a.data.shape != b.data.shape:
        raise ShapeError(f"add: mismatched shapes {a.data.shape} and {b.data.shape}")
    return _emit("add", K.add(a.data, b.data), (a, b), lambda g: (g, g))


def sub(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    if a.data.shape != b.data.shape:
        raise ShapeError(f"sub: mismatched shapes {a.data.shape} and {b.data.shape}")
    return _emit("sub", K.sub(a.data, b.data), (a, b), lambda g: (g, -g))


def mul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    ad, bd = a.data, b.data
    if ad.shape != bd.shape:
        raise ShapeError(f"mul: mismatched shapes {ad.shape} and {bd.shape}")
    return _emit("mul", K.mul(ad, bd), (a, b),
                 lambda g: (K.mul(g, bd), K.mul(g, ad)))


def scale(x, c: float) -> Tensor:
    x = _lift(x)
    c = float(c)
    return _emit("scale", K.scale(x.data, c), (x,), lambda g: (K.scale(g, c),))


def reduce_sum(x) -> Tensor:
    x = _lift(x)
    xd = x.data
    out = np.asarray(K.reduce_sum(xd))

    def bw(g):
        return (np.full(xd.shape, float(g), dtype=np.float64),)

    return _emit("reduce_sum", out, (x,), bw)


def reduce_mean(x) -> Tensor:
    x = _lift(x)
    xd = x.data
    out = np.asarray(K.reduce_mean(xd))

    def bw(g):
        return (np.full(xd.shape, float(g) / xd.size, dtype=np.float64),)

    return _emit("reduce_mean", out, (x,), bw)
