"""Pure numpy implementations of the numeric kernels.

This is the fallback backend; ``defstream._kernels`` (Cython) provides the
same functions compiled to C.  Both operate on C-contiguous float64 arrays
and must implement identical mathematics — the selection happens once at
import in :mod:`defstream.backend`.

Conventions:
  * matrices are (rows, cols) row-major;
  * log_softmax/nll/js reduce over the last axis;
  * nll_mean and js_mean average over rows, so batch size scales gradients.
"""

from __future__ import annotations

import numpy as np

NAME = "numpy"


def matmul(a, b):
    return a @ b


def matmul_grad_a(g, b):
    return g @ b.T


def matmul_grad_b(a, g):
    return a.T @ g


def add_bias(m, bias):
    return m + bias


def bias_grad(g):
    return g.sum(axis=0)


def relu(x):
    return np.maximum(x, 0.0)


def relu_grad(g, x):
    return g * (x > 0.0)


def log_softmax(z):
    # max-subtraction keeps exp() in range for large logits / small temperatures
    zmax = z.max(axis=-1, keepdims=True)
    shifted = z - zmax
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    return shifted - lse


def log_softmax_grad(g, out):
    return g - np.exp(out) * g.sum(axis=-1, keepdims=True)


def nll_mean(logp, labels):
    rows = np.arange(logp.shape[0])
    return float(-logp[rows, labels].mean())


def nll_mean_grad(g, logp, labels):
    d = np.zeros_like(logp)
    rows = np.arange(logp.shape[0])
    d[rows, labels] = -g / logp.shape[0]
    return d


def js_mean(lp, lq):
    """Mean Jensen-Shannon divergence over rows of two log-probability arrays.

    js(p, q) = 0.5*KL(p||m) + 0.5*KL(q||m) with m = (p+q)/2, natural log.
    Evaluated from log-probabilities so underflowed coordinates (p or q
    exactly 0) contribute 0 by the x*log(x) -> 0 convention.
    """
    p = np.exp(lp)
    q = np.exp(lq)
    m = 0.5 * (p + q)
    with np.errstate(divide="ignore", invalid="ignore"):
        logm = np.log(m)
        term_p = np.where(p > 0.0, p * (lp - logm), 0.0)
        term_q = np.where(q > 0.0, q * (lq - logm), 0.0)
    total = 0.5 * (term_p.sum() + term_q.sum())
    rows = lp.shape[0] if lp.ndim == 2 else 1
    return float(total / rows)


def js_mean_grad(g, lp, lq):
    # d js / d lp_i = 0.5 * p_i * (lp_i - log m_i); symmetric in q.
    p = np.exp(lp)
    q = np.exp(lq)
    m = 0.5 * (p + q)
    with np.errstate(divide="ignore", invalid="ignore"):
        logm = np.log(m)
        dlp = np.where(p > 0.0, 0.5 * p * (lp - logm), 0.0)
        dlq = np.where(q > 0.0, 0.5 * q * (lq - logm), 0.0)
    rows = lp.shape[0] if lp.ndim == 2 else 1
    scale = g / rows
    return dlp * scale, dlq * scale


def mlp_input_grad(weights, biases, x, y):
    """(d mean-CE / dx, loss) through an affine+relu stack, fused.

    Attack generation only needs the input gradient, so this skips the
    tape entirely; the math matches the recorded-op path bit-for-bit up to
    summation order.
    """
    last = len(weights) - 1
    pres = []
    h = x
    for i in range(last):
        z = h @ weights[i] + biases[i]
        pres.append(z)
        h = np.maximum(z, 0.0)
    logits = h @ weights[last] + biases[last]
    lsm = log_softmax(logits)
    loss = nll_mean(lsm, y)
    d = np.exp(lsm)
    d[np.arange(x.shape[0]), y] -= 1.0
    d /= x.shape[0]
    for i in range(last, 0, -1):
        d = d @ weights[i].T
        d *= pres[i - 1] > 0.0
    return d @ weights[0].T, loss


def add(a, b):
    return a + b


def sub(a, b):
    return a - b


def mul(a, b):
    return a * b


def scale(x, c):
    return x * c


def reduce_sum(x):
    return float(x.sum())


def reduce_mean(x):
    return float(x.mean())
