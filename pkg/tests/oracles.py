"""Independent numerical oracles shared by the test suite.

These deliberately avoid the library's own computation paths: finite
differences for gradients, a closed-form least-squares probe for linear
separability, and a direct sort-and-stride reference for replay selection.
"""

from __future__ import annotations

import numpy as np


def central_difference(f, x: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central finite-difference gradient of scalar f at x, one coordinate at a time."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.ravel()
    gflat = grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = f(x)
        flat[i] = orig - step
        lo = f(x)
        flat[i] = orig
        gflat[i] = (hi - lo) / (2.0 * step)
    return grad


def max_relative_error(approx: np.ndarray, exact: np.ndarray,
                       floor: float = 1e-8) -> float:
    """max |a - e| / max(|a|, |e|, floor); the floor guards near-zero coords."""
    approx = np.asarray(approx, dtype=np.float64)
    exact = np.asarray(exact, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(approx), np.abs(exact)), floor)
    return float((np.abs(approx - exact) / denom).max())


def least_squares_probe(train_x: np.ndarray, train_y: np.ndarray,
                        test_x: np.ndarray, test_y: np.ndarray,
                        ridge: float = 1e-6) -> float:
    """Accuracy of a one-vs-all ridge regression classifier fit in closed form."""
    n, d = train_x.shape
    classes = int(train_y.max()) + 1
    X = np.hstack([train_x, np.ones((n, 1))])
    T = np.eye(classes)[train_y]
    A = X.T @ X + ridge * np.eye(d + 1)
    W = np.linalg.solve(A, X.T @ T)
    Xt = np.hstack([test_x, np.ones((test_x.shape[0], 1))])
    pred = (Xt @ W).argmax(axis=1)
    return float((pred == test_y).mean())


def stride_select_reference(scores: np.ndarray, capacity: int) -> list[int]:
    """Brute-force replay selection: sort by (score, index), take floor(i*n/K)."""
    n = scores.shape[0]
    order = sorted(range(n), key=lambda i: (scores[i], i))
    if n <= capacity:
        return order
    return [order[(i * n) // capacity] for i in range(capacity)]
