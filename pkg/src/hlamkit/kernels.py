"""Row-range kernels: SpMV, dot, axpby, the fused triad and the stationary sweeps.

Each kernel works on a half-open row range ``[lo, hi)`` and touches nothing
outside it, so disjoint ranges can run concurrently. The compiled loops
release the GIL. Accumulations run strictly left to right, which makes
every kernel deterministic for a fixed range.
"""

from __future__ import annotations

import enum
import threading

import numpy as np
from numba import njit

from .errors import ContractViolation
from .problem import CsrMatrix


class AccessCounter:
    """Element-access tally: one count per vector or matrix element touched.

    A disabled counter never changes, so instrumented call sites cost one
    attribute check.
    """

    def __init__(self, enabled: bool = True):
        self.enabled = enabled
        self.elements_read = 0
        self.elements_written = 0
        self._lock = threading.Lock()

    def add(self, read: int, written: int) -> None:
        if not self.enabled:
            return
        with self._lock:
            self.elements_read += read
            self.elements_written += written

    @property
    def total(self) -> int:
        return self.elements_read + self.elements_written

    def snapshot(self) -> tuple[int, int]:
        with self._lock:
            return self.elements_read, self.elements_written

    def merge(self, other: "AccessCounter") -> None:
        r, w = other.snapshot()
        self.add(r, w)


# --- compiled loops ---------------------------------------------------------

@njit(cache=True, nogil=True)
def _spmv(row_ptr, col_idx, values, x, y, lo, hi):
    for i in range(lo, hi):
        s = 0.0
        for k in range(row_ptr[i], row_ptr[i + 1]):
            s += values[k] * x[col_idx[k]]
        y[i] = s


@njit(cache=True, nogil=True)
def _dot(x, y, lo, hi):
    s = 0.0
    for i in range(lo, hi):
        s += x[i] * y[i]
    return s


@njit(cache=True, nogil=True)
def _axpby(a, x, b, y, w, lo, hi):
    for i in range(lo, hi):
        w[i] = a * x[i] + b * y[i]


@njit(cache=True, nogil=True)
def _triad(a, x, b, y, c, z, lo, hi):
    for i in range(lo, hi):
        z[i] = a * x[i] + b * y[i] + c * z[i]


@njit(cache=True, nogil=True)
def _jacobi(row_ptr, col_idx, values, diag_pos, b, x, xn, lo, hi):
    res = 0.0
    for i in range(lo, hi):
        s = b[i]
        d = diag_pos[i]
        for k in range(row_ptr[i], row_ptr[i + 1]):
            if k != d:
                s -= values[k] * x[col_idx[k]]
        r = s - values[d] * x[i]
        res += r * r
        xn[i] = s / values[d]
    return res


@njit(cache=True, nogil=True)
def _gs_forward(row_ptr, col_idx, values, diag_pos, b, x, lo, hi):
    for i in range(lo, hi):
        s = b[i]
        d = diag_pos[i]
        for k in range(row_ptr[i], row_ptr[i + 1]):
            if k != d:
                s -= values[k] * x[col_idx[k]]
        x[i] = s / values[d]


@njit(cache=True, nogil=True)
def _gs_backward(row_ptr, col_idx, values, diag_pos, b, x, lo, hi):
    for i in range(hi - 1, lo - 1, -1):
        s = b[i]
        d = diag_pos[i]
        for k in range(row_ptr[i], row_ptr[i + 1]):
            if k != d:
                s -= values[k] * x[col_idx[k]]
        x[i] = s / values[d]


@njit(cache=True, nogil=True)
def _residual_sq(row_ptr, col_idx, values, b, x, lo, hi):
    res = 0.0
    for i in range(lo, hi):
        s = b[i]
        for k in range(row_ptr[i], row_ptr[i + 1]):
            s -= values[k] * x[col_idx[k]]
        res += s * s
    return res


# --- checked wrappers -------------------------------------------------------

def _check_range(lo: int, hi: int, n: int, what: str) -> None:
    if not (0 <= lo <= hi <= n):
        raise ContractViolation(f"{what}: range [{lo}, {hi}) outside [0, {n})")


def _check_matrix_range(matrix: CsrMatrix, x, y, lo, hi, what):
    _check_range(lo, hi, matrix.nrows, what)
    if len(x) < matrix.ncols:
        raise ContractViolation(f"{what}: x has {len(x)} entries, matrix references {matrix.ncols}")
    if len(y) < hi:
        raise ContractViolation(f"{what}: output shorter than range end {hi}")


def _distinct(*arrays) -> int:
    seen = []
    for a in arrays:
        if not any(a is s for s in seen):
            seen.append(a)
    return len(seen)


def spmv(matrix: CsrMatrix, x: np.ndarray, y: np.ndarray, lo: int = 0, hi: int | None = None,
         counter: AccessCounter | None = None) -> None:
    """``y[i] = sum_j A[i, j] * x[j]`` for rows ``lo <= i < hi``.

    ``x`` may be longer than ``nrows`` when it carries halo entries at its tail.
    """
    hi = matrix.nrows if hi is None else hi
    _check_matrix_range(matrix, x, y, lo, hi, "spmv")
    _spmv(matrix.row_ptr, matrix.col_idx, matrix.values, x, y, lo, hi)
    if counter is not None and counter.enabled and hi > lo:
        nnz = int(matrix.row_ptr[hi] - matrix.row_ptr[lo])
        counter.add(nnz + matrix.distinct_columns(lo, hi), hi - lo)


def dot(x: np.ndarray, y: np.ndarray, lo: int = 0, hi: int | None = None,
        counter: AccessCounter | None = None) -> float:
    hi = len(x) if hi is None else hi
    _check_range(lo, hi, min(len(x), len(y)), "dot")
    if counter is not None:
        counter.add(_distinct(x, y) * (hi - lo), 0)
    return float(_dot(x, y, lo, hi))


def axpby(a: float, x: np.ndarray, b: float, y: np.ndarray, w: np.ndarray, lo: int = 0,
          hi: int | None = None, counter: AccessCounter | None = None) -> None:
    """``w = a*x + b*y`` over the range; ``w`` may alias ``x`` or ``y``."""
    hi = len(w) if hi is None else hi
    _check_range(lo, hi, min(len(x), len(y), len(w)), "axpby")
    _axpby(float(a), x, float(b), y, w, lo, hi)
    if counter is not None:
        counter.add(_distinct(x, y) * (hi - lo), hi - lo)


def triad(a: float, x: np.ndarray, b: float, y: np.ndarray, c: float, z: np.ndarray,
          lo: int = 0, hi: int | None = None, counter: AccessCounter | None = None) -> None:
    """``z = a*x + b*y + c*z`` in one pass, reading each ``z`` element once."""
    hi = len(z) if hi is None else hi
    _check_range(lo, hi, min(len(x), len(y), len(z)), "triad")
    _triad(float(a), x, float(b), y, float(c), z, lo, hi)
    if counter is not None:
        counter.add(_distinct(x, y, z) * (hi - lo), hi - lo)


def jacobi_sweep(matrix: CsrMatrix, b: np.ndarray, x: np.ndarray, x_new: np.ndarray,
                 lo: int = 0, hi: int | None = None, counter: AccessCounter | None = None) -> float:
    """One Jacobi update of rows ``[lo, hi)``; returns ``sum (b - A x)_i^2`` for the old ``x``."""
    hi = matrix.nrows if hi is None else hi
    _check_matrix_range(matrix, x, x_new, lo, hi, "jacobi_sweep")
    res = _jacobi(matrix.row_ptr, matrix.col_idx, matrix.values, matrix.diag_pos, b, x, x_new, lo, hi)
    if counter is not None and counter.enabled and hi > lo:
        nnz = int(matrix.row_ptr[hi] - matrix.row_ptr[lo])
        counter.add(nnz + matrix.distinct_columns(lo, hi) + (hi - lo), hi - lo)
    return float(res)


def gs_sweep(matrix: CsrMatrix, b: np.ndarray, x: np.ndarray, lo: int = 0, hi: int | None = None,
             backward: bool = False, counter: AccessCounter | None = None) -> None:
    """In-place Gauss-Seidel sweep over rows ``[lo, hi)`` (descending if ``backward``)."""
    hi = matrix.nrows if hi is None else hi
    _check_matrix_range(matrix, x, x, lo, hi, "gs_sweep")
    kernel = _gs_backward if backward else _gs_forward
    kernel(matrix.row_ptr, matrix.col_idx, matrix.values, matrix.diag_pos, b, x, lo, hi)
    if counter is not None and counter.enabled and hi > lo:
        nnz = int(matrix.row_ptr[hi] - matrix.row_ptr[lo])
        counter.add(nnz + matrix.distinct_columns(lo, hi) + (hi - lo), hi - lo)


def residual_sq(matrix: CsrMatrix, b: np.ndarray, x: np.ndarray, lo: int = 0,
                hi: int | None = None, counter: AccessCounter | None = None) -> float:
    """``sum_i (b - A x)_i^2`` over rows ``[lo, hi)``."""
    hi = matrix.nrows if hi is None else hi
    _check_matrix_range(matrix, x, b, lo, hi, "residual_sq")
    res = _residual_sq(matrix.row_ptr, matrix.col_idx, matrix.values, b, x, lo, hi)
    if counter is not None and counter.enabled and hi > lo:
        nnz = int(matrix.row_ptr[hi] - matrix.row_ptr[lo])
        counter.add(nnz + matrix.distinct_columns(lo, hi) + (hi - lo), 0)
    return float(res)


class CostModel(enum.Enum):
    CG = "cg"
    CG_NB = "cg-nb"
    BICGSTAB = "bicgstab"
    BICGSTAB_B1 = "bicgstab-b1"


# (constant, multiplier of n_bar) per iteration and row
_COST = {
    CostModel.CG: (12, 1),
    CostModel.CG_NB: (15, 1),
    CostModel.BICGSTAB: (21, 2),
    CostModel.BICGSTAB_B1: (24, 2),
}


def estimate_accesses(method, nbar: float, r: int) -> float:
    """Rough element-access count for one iteration of a Krylov method.

    >>> estimate_accesses("cg", 0.0, 1)
    12.0
    """
    method = CostModel(getattr(method, "value", method))
    const, mult = _COST[method]
    return float((const + mult * nbar) * r)
