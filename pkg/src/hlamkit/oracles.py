"""Dense, deliberately naive reference solvers used to check the task-graph ones.

They share no code with the kernels: matrices are densified and every
update is plain numpy on full vectors. Stopping rules mirror the library
solvers so iteration counts can be compared one to one.
"""

from __future__ import annotations

import math

import numpy as np


def fsum_dot(x: np.ndarray, y: np.ndarray) -> float:
    """Correctly rounded dot product."""
    return math.fsum(np.asarray(x, dtype=float) * np.asarray(y, dtype=float))


def _dense(matrix) -> np.ndarray:
    return matrix.toarray() if hasattr(matrix, "toarray") else np.asarray(matrix, dtype=float)


def dense_cg(matrix, b, epsilon=1e-6, max_iterations=5000, x0=None):
    """Returns ``(iterates, residual_norms)``; ``iterates[k]`` is x_k."""
    A = _dense(matrix)
    x = np.zeros(len(b)) if x0 is None else np.array(x0, dtype=float)
    r = b - A @ x
    p = r.copy()
    rr = fsum_dot(r, r)
    xs, hist = [x.copy()], [math.sqrt(rr)]
    while hist[-1] >= epsilon and rr != 0.0 and len(xs) <= max_iterations:
        Ap = A @ p
        alpha = rr / fsum_dot(p, Ap)
        x = x + alpha * p
        r = r - alpha * Ap
        rr_new = fsum_dot(r, r)
        p = r + (rr_new / rr) * p
        rr = rr_new
        xs.append(x.copy())
        hist.append(math.sqrt(rr))
    return xs, hist


def dense_jacobi(matrix, b, epsilon=1e-6, max_iterations=5000, x0=None):
    A = _dense(matrix)
    d = np.diag(A)
    x = np.zeros(len(b)) if x0 is None else np.array(x0, dtype=float)
    xs, hist = [x.copy()], []
    while True:
        res = b - A @ x
        hist.append(math.sqrt(fsum_dot(res, res)))
        if hist[-1] < epsilon or len(xs) > max_iterations:
            return xs, hist
        x = x + res / d
        xs.append(x.copy())


def dense_symmetric_gs(matrix, b, epsilon=1e-6, max_iterations=5000, x0=None):
    A = _dense(matrix)
    n = len(b)
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    xs, hist = [x.copy()], []
    while True:
        res = b - A @ x
        hist.append(math.sqrt(fsum_dot(res, res)))
        if hist[-1] < epsilon or len(xs) > max_iterations:
            return xs, hist
        for order in (range(n), range(n - 1, -1, -1)):
            for i in order:
                x[i] += (b[i] - A[i] @ x) / A[i, i]
        xs.append(x.copy())


def relative_distance(a: np.ndarray, b: np.ndarray) -> float:
    """``|a - b| / |b|``; zero when the vectors coincide (including both zero)."""
    diff = np.linalg.norm(a - b)
    if diff == 0.0:
        return 0.0
    return float(diff / max(np.linalg.norm(b), np.linalg.norm(a)))
