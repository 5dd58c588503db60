"""Compare the compiled kernel core against the numpy fallback.

Times the hot kernels at training-loop sizes (batch 8, 64-wide layers) and
a macro benchmark of full attack-plus-update training batches, then prints
the per-kernel speedup.  Build the extension first:

    python setup.py build_ext --inplace
    python benchmarks/bench_backends.py
"""

from __future__ import annotations

import importlib
import time

import numpy as np

from defstream import kernels_numpy as knp

try:
    from defstream import _kernels as kcy
except ImportError:
    kcy = None


def best_of(fn, repeats=5, loops=200):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        for _ in range(loops):
            fn()
        best = min(best, (time.perf_counter() - t0) / loops)
    return best


def kernel_cases():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(8, 64))
    w = rng.normal(size=(64, 64))
    g = rng.normal(size=(8, 64))
    z = rng.normal(size=(8, 10))
    labels = rng.integers(0, 10, size=8).astype(np.intp)
    logp = knp.log_softmax(z)
    lq = knp.log_softmax(rng.normal(size=(8, 10)))
    weights = [w.copy(), rng.normal(size=(64, 10))]
    biases = [rng.normal(size=64), rng.normal(size=10)]
    x01 = rng.uniform(0, 1, size=(8, 64))
    return [
        ("matmul 8x64x64", lambda K: K.matmul(a, w)),
        ("matmul_grad_a", lambda K: K.matmul_grad_a(g, w)),
        ("matmul_grad_b", lambda K: K.matmul_grad_b(a, g)),
        ("add_bias", lambda K: K.add_bias(a, w[0])),
        ("relu", lambda K: K.relu(a)),
        ("log_softmax 8x10", lambda K: K.log_softmax(z)),
        ("nll_mean", lambda K: K.nll_mean(logp, labels)),
        ("js_mean", lambda K: K.js_mean(logp, lq)),
        ("mlp_input_grad",
         lambda K: K.mlp_input_grad(weights, biases, x01, labels)),
    ]


def train_batch_case(backend_name: str):
    """One consistency-regularized training batch, end to end."""
    import os

    os.environ["DEFSTREAM_BACKEND"] = backend_name
    import defstream.backend as backend_mod
    importlib.reload(backend_mod)
    import defstream.tensor as tensor_mod
    importlib.reload(tensor_mod)
    import defstream.model as model_mod
    importlib.reload(model_mod)
    import defstream.attacks as attacks_mod
    importlib.reload(attacks_mod)
    import defstream.consistency as consistency_mod
    importlib.reload(consistency_mod)
    from defstream import tensor as T
    from defstream.consistency import ConsistencyConfig, total_loss
    from defstream.model import Classifier, SgdState, sgd_step
    from defstream.rng import stream

    rng = np.random.default_rng(1)
    x = rng.uniform(0, 1, size=(8, 64))
    y = rng.integers(0, 10, size=8)
    teacher = Classifier.init([64, 64, 10], stream(0, "t")).snapshot(0)
    student = Classifier.init([64, 64, 10], stream(1, "s"))
    state = SgdState(0.05, 0.9, 5e-4)
    cfg = ConsistencyConfig(image_hw=(8, 8))

    def step():
        loss, tape, _ = total_loss(teacher, student, x, y, cfg, seed=7)
        grads = T.backward(tape, loss)
        sgd_step(student, student.gradients_from(tape, grads), state)

    return step


def main() -> None:
    if kcy is None:
        print("compiled core not built; showing numpy timings only")
    rows = []
    for name, fn in kernel_cases():
        t_np = best_of(lambda: fn(knp))
        t_cy = best_of(lambda: fn(kcy)) if kcy else float("nan")
        rows.append((name, t_np, t_cy))

    print(f"{'kernel':24} {'numpy':>12} {'cython':>12} {'speedup':>9}")
    for name, t_np, t_cy in rows:
        ratio = t_np / t_cy if t_cy == t_cy else float("nan")
        print(f"{name:24} {t_np * 1e6:10.2f}us {t_cy * 1e6:10.2f}us "
              f"{ratio:8.2f}x")

    print()
    macro = []
    for backend in ("numpy", "cython") if kcy else ("numpy",):
        step = train_batch_case(backend)
        t = best_of(step, repeats=3, loops=20)
        macro.append((backend, t))
        print(f"training batch (attacks + update), {backend:7}: "
              f"{t * 1e3:7.2f} ms")
    if len(macro) == 2:
        print(f"macro speedup: {macro[0][1] / macro[1][1]:.2f}x")


if __name__ == "__main__":
    main()
