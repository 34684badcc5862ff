"""HPCG-style sparse systems on a structured 3D hexahedral grid.

Rows are numbered x-fastest, z-slowest (``row = i + nx*j + nx*ny*k``) so a
split along z yields contiguous row ranges. Every stencil point carries the
HPCG coefficients: 26 on the diagonal and -1 for each in-grid neighbour;
out-of-grid neighbours are simply dropped.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import GenerationError

DIAGONAL_VALUE = 26.0
OFF_DIAGONAL_VALUE = -1.0

_INT64_MAX = np.iinfo(np.int64).max


class Stencil(enum.IntEnum):
    SEVEN = 7
    TWENTY_SEVEN = 27

    @classmethod
    def parse(cls, value) -> "Stencil":
        if isinstance(value, Stencil):
            return value
        try:
            return cls(int(value))
        except (TypeError, ValueError):
            raise ValueError(f"stencil must be 7 or 27, got {value!r}") from None


@dataclass(frozen=True)
class GridSpec:
    nx: int
    ny: int
    nz: int
    stencil: Stencil = Stencil.SEVEN

    def __post_init__(self):
        for name in ("nx", "ny", "nz"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v < 1:
                raise ValueError(f"{name} must be a positive integer, got {v!r}")
        object.__setattr__(self, "stencil", Stencil.parse(self.stencil))

    @property
    def nrows(self) -> int:
        return self.nx * self.ny * self.nz

    @property
    def plane_size(self) -> int:
        return self.nx * self.ny

    def row(self, i: int, j: int, k: int) -> int:
        return i + self.nx * j + self.nx * self.ny * k

    def with_nz(self, nz: int) -> "GridSpec":
        return GridSpec(self.nx, self.ny, nz, self.stencil)

    @classmethod
    def parse(cls, text: str, stencil=Stencil.SEVEN) -> "GridSpec":
        """Parse ``"NXxNYxNZ"`` (e.g. ``"8x8x16"``)."""
        parts = text.lower().split("x")
        if len(parts) != 3:
            raise ValueError(f"grid must look like NXxNYxNZ, got {text!r}")
        nx, ny, nz = (int(p) for p in parts)
        return cls(nx, ny, nz, stencil)

    def __str__(self) -> str:
        return f"{self.nx}x{self.ny}x{self.nz}/{int(self.stencil)}pt"


@dataclass(eq=False)
class CsrMatrix:
    """Compressed sparse row matrix with a cached diagonal position per row.

    ``ncols`` may exceed ``nrows`` for rank-local matrices whose external
    columns live in tail slots. Generated matrices keep column indices
    strictly increasing inside each row; rank-local matrices keep the
    global term order instead so their row sums round identically.
    """

    nrows: int
    row_ptr: np.ndarray
    col_idx: np.ndarray
    values: np.ndarray
    diag_pos: np.ndarray
    ncols: int = -1
    _distinct_cols: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if self.ncols < 0:
            self.ncols = self.nrows

    @property
    def nnz(self) -> int:
        return int(self.row_ptr[self.nrows])

    def diagonal(self) -> np.ndarray:
        return self.values[self.diag_pos]

    def row_nnz(self) -> np.ndarray:
        return np.diff(self.row_ptr)

    def distinct_columns(self, lo: int, hi: int) -> int:
        """Number of distinct columns referenced by rows ``[lo, hi)`` (cached)."""
        key = (lo, hi)
        n = self._distinct_cols.get(key)
        if n is None:
            cols = self.col_idx[self.row_ptr[lo]:self.row_ptr[hi]]
            n = int(np.unique(cols).size)
            self._distinct_cols[key] = n
        return n

    def toarray(self) -> np.ndarray:
        dense = np.zeros((self.nrows, self.ncols))
        rows = np.repeat(np.arange(self.nrows), self.row_nnz())
        dense[rows, self.col_idx] = self.values
        return dense

    def to_scipy(self):
        import scipy.sparse as sp

        return sp.csr_matrix(
            (self.values, self.col_idx, self.row_ptr), shape=(self.nrows, self.ncols)
        )


@dataclass(eq=False)
class LinearSystem:
    grid: GridSpec
    matrix: CsrMatrix
    rhs: np.ndarray
    exact_solution: np.ndarray

    @property
    def nrows(self) -> int:
        return self.matrix.nrows


def _neighbour_offsets(stencil: Stencil) -> list[tuple[int, int, int]]:
    # (dz, dy, dx) lexicographic order == ascending column order for a fixed row
    if stencil is Stencil.TWENTY_SEVEN:
        return [(dz, dy, dx) for dz in (-1, 0, 1) for dy in (-1, 0, 1) for dx in (-1, 0, 1)]
    return [(-1, 0, 0), (0, -1, 0), (0, 0, -1), (0, 0, 0), (0, 0, 1), (0, 1, 0), (1, 0, 0)]


def generate(spec: GridSpec) -> LinearSystem:
    """Build the stencil matrix and the right-hand side for ``x = 1``.

    Parameters
    ----------
    spec : GridSpec
        Grid extents and stencil width.

    Returns
    -------
    LinearSystem
        ``rhs`` is the row sum of the matrix, so ``matrix @ ones == rhs``
        holds exactly.
    """
    nx, ny, nz = spec.nx, spec.ny, spec.nz
    offsets = _neighbour_offsets(spec.stencil)
    nrows = nx * ny * nz
    if nrows > _INT64_MAX // len(offsets):
        raise GenerationError(f"grid {spec} overflows 64-bit row/nonzero counters")

    k, j, i = np.meshgrid(
        np.arange(nz, dtype=np.int64),
        np.arange(ny, dtype=np.int64),
        np.arange(nx, dtype=np.int64),
        indexing="ij",
    )
    i, j, k = i.ravel(), j.ravel(), k.ravel()
    rows = i + nx * j + nx * ny * k

    cols = np.empty((nrows, len(offsets)), dtype=np.int64)
    valid = np.empty((nrows, len(offsets)), dtype=bool)
    for c, (dz, dy, dx) in enumerate(offsets):
        ii, jj, kk = i + dx, j + dy, k + dz
        valid[:, c] = (ii >= 0) & (ii < nx) & (jj >= 0) & (jj < ny) & (kk >= 0) & (kk < nz)
        cols[:, c] = rows + dx + nx * dy + nx * ny * dz

    counts = valid.sum(axis=1)
    row_ptr = np.zeros(nrows + 1, dtype=np.int64)
    np.cumsum(counts, out=row_ptr[1:])
    col_idx = cols[valid]
    values = np.where(col_idx == np.repeat(rows, counts), DIAGONAL_VALUE, OFF_DIAGONAL_VALUE)

    centre = offsets.index((0, 0, 0))
    # valid entries before the centre column in each row
    diag_pos = row_ptr[:-1] + valid[:, :centre].sum(axis=1)

    matrix = CsrMatrix(nrows, row_ptr, col_idx, values.astype(np.float64), diag_pos.astype(np.int64))
    # row sums of small integers are exact in any order
    rhs = DIAGONAL_VALUE + OFF_DIAGONAL_VALUE * (counts - 1).astype(np.float64)
    return LinearSystem(spec, matrix, rhs, np.ones(nrows))


def average_nnz_per_row(matrix: CsrMatrix) -> float:
    if matrix.nrows < 1:
        raise ValueError("matrix has no rows")
    return matrix.nnz / matrix.nrows


def write_matrix_market(matrix: CsrMatrix, path: str | Path) -> None:
    """Export the (symmetric) matrix as a Matrix Market coordinate file."""
    import scipy.io

    scipy.io.mmwrite(str(path), matrix.to_scipy(), symmetry="symmetric",
                     comment="HPCG-style stencil matrix")
