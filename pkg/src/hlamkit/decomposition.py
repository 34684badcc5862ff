"""Two-level decomposition: z-slabs across ranks, aligned row blocks inside a rank.

A rank renumbers its owned rows to ``[0, n_local)`` and appends the external
columns it needs as tail slots ``[n_local, n_local + halo_size)``, grouped by
neighbour (ascending rank) and ordered by global index inside each group.
Halo receives therefore land at the end of the local vector.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import PlanningError
from .problem import CsrMatrix, GridSpec, LinearSystem, generate

DEP_GAP_THRESHOLD = 16


def split(n: int, parts: int, simd_width: int = 1) -> list[tuple[int, int]]:
    """Split ``n`` items into ``parts`` blocks whose starts are SIMD-aligned.

    Whole SIMD chunks are dealt out as evenly as possible (earlier blocks
    take the surplus) and the final block absorbs the ragged tail.

    >>> split(100, 4, 8)
    [(0, 24), (24, 24), (48, 24), (72, 28)]
    """
    if n < 0 or parts < 1 or simd_width < 1:
        raise ValueError(f"split({n}, {parts}, {simd_width}): need n >= 0, parts >= 1, simd >= 1")
    full, tail = divmod(n, simd_width)
    q, rem = divmod(full, parts)
    blocks = []
    start = 0
    for p in range(parts):
        size = (q + (p < rem)) * simd_width
        if p == parts - 1:
            size += tail
        blocks.append((start, size))
        start += size
    return blocks


@dataclass
class RankInfo:
    rank: int
    row_start: int
    row_stop: int
    neighbors: list[int]
    send_map: dict[int, np.ndarray]
    recv_map: dict[int, tuple[int, int]]
    external_cols: np.ndarray

    @property
    def n_local(self) -> int:
        return self.row_stop - self.row_start

    @property
    def halo_size(self) -> int:
        return int(self.external_cols.size)

    def to_dict(self) -> dict:
        return {
            "rank": self.rank,
            "rows": [self.row_start, self.row_stop],
            "neighbors": self.neighbors,
            "send_map": {str(q): v.tolist() for q, v in self.send_map.items()},
            "recv_map": {str(q): {"count": c, "offset": o} for q, (c, o) in self.recv_map.items()},
            "halo_size": self.halo_size,
        }


@dataclass
class RankPlan:
    grid: GridSpec
    rank_count: int
    ranks: list[RankInfo]

    def __getitem__(self, rank: int) -> RankInfo:
        return self.ranks[rank]

    def owner_of(self, row: int) -> int:
        starts = [r.row_start for r in self.ranks]
        return int(np.searchsorted(starts, row, side="right") - 1)

    def to_dict(self) -> dict:
        return {"grid": str(self.grid), "rank_count": self.rank_count,
                "ranks": [r.to_dict() for r in self.ranks]}

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def plan_ranks(spec: GridSpec, rank_count: int, matrix: CsrMatrix | None = None) -> RankPlan:
    """Assign contiguous z-slabs to ranks and derive the halo schedule.

    The halo pattern is read off the matrix columns (generated on demand),
    so both stencils go through the same code.
    """
    if rank_count < 1:
        raise PlanningError("rank_count must be >= 1")
    if rank_count > spec.nz:
        raise PlanningError(f"{rank_count} ranks but only {spec.nz} z-planes: a rank would own nothing")
    if matrix is None:
        matrix = generate(spec).matrix

    plane = spec.plane_size
    bounds = [0]
    for start, size in split(spec.nz, rank_count, 1):
        bounds.append((start + size) * plane)
    owner_starts = np.array(bounds[:-1])

    externals: list[np.ndarray] = []
    for p in range(rank_count):
        lo, hi = bounds[p], bounds[p + 1]
        cols = np.unique(matrix.col_idx[matrix.row_ptr[lo]:matrix.row_ptr[hi]])
        externals.append(cols[(cols < lo) | (cols >= hi)])

    ranks = []
    for p in range(rank_count):
        lo, hi = bounds[p], bounds[p + 1]
        ext = externals[p]
        owners = np.searchsorted(owner_starts, ext, side="right") - 1
        neighbors = sorted(set(owners.tolist()))
        recv_map = {}
        tail = []
        offset = hi - lo
        for q in neighbors:
            cols_q = ext[owners == q]
            recv_map[q] = (int(cols_q.size), offset)
            offset += cols_q.size
            tail.append(cols_q)
        send_map = {}
        for q in range(rank_count):
            if q == p:
                continue
            wanted = externals[q]
            mine = wanted[(wanted >= lo) & (wanted < hi)]
            if mine.size:
                send_map[q] = (mine - lo).astype(np.int64)
        ext_tail = np.concatenate(tail) if tail else np.empty(0, dtype=np.int64)
        ranks.append(RankInfo(p, lo, hi, neighbors, send_map, recv_map, ext_tail))
    return RankPlan(spec, rank_count, ranks)


@dataclass(eq=False)
class LocalSystem:
    """The slice of a global system owned by one rank, in local numbering."""

    info: RankInfo
    matrix: CsrMatrix
    rhs: np.ndarray

    @property
    def n_local(self) -> int:
        return self.info.n_local

    @property
    def n_ext(self) -> int:
        return self.info.n_local + self.info.halo_size


def local_system(system: LinearSystem, plan: RankPlan, rank: int) -> LocalSystem:
    """Extract rank ``rank``'s rows, renumbering columns to local + tail slots."""
    info = plan[rank]
    A = system.matrix
    lo, hi = info.row_start, info.row_stop
    k0, k1 = int(A.row_ptr[lo]), int(A.row_ptr[hi])
    gcols = A.col_idx[k0:k1]
    owned = (gcols >= lo) & (gcols < hi)
    lcols = np.empty_like(gcols)
    lcols[owned] = gcols[owned] - lo
    if info.halo_size:
        # tail order is grouped by neighbour, each group sorted
        order = np.argsort(info.external_cols, kind="stable")
        pos = np.searchsorted(info.external_cols[order], gcols[~owned])
        lcols[~owned] = info.n_local + order[pos]
    matrix = CsrMatrix(
        nrows=hi - lo,
        row_ptr=A.row_ptr[lo:hi + 1] - k0,
        col_idx=lcols,
        values=A.values[k0:k1].copy(),
        diag_pos=A.diag_pos[lo:hi] - k0,
        ncols=info.n_local + info.halo_size,
    )
    return LocalSystem(info, matrix, system.rhs[lo:hi].copy())


@dataclass
class TaskPlan:
    """Row blocks of one rank plus the x-regions each block's SpMV reads."""

    task_count: int
    simd_width: int
    blocks: list[tuple[int, int]]
    spmv_deps: list[list[tuple[int, int]]] = field(default_factory=list)

    def ranges(self):
        for start, size in self.blocks:
            yield start, start + size

    def to_dict(self) -> dict:
        return {"task_count": self.task_count, "simd_width": self.simd_width,
                "blocks": [list(b) for b in self.blocks],
                "spmv_deps": [[list(r) for r in d] for d in self.spmv_deps]}


def _coalesce(cols: np.ndarray, gap: int) -> list[tuple[int, int]]:
    if cols.size == 0:
        return []
    breaks = np.nonzero(np.diff(cols) > gap + 1)[0]
    starts = np.concatenate(([cols[0]], cols[breaks + 1]))
    stops = np.concatenate((cols[breaks], [cols[-1]])) + 1
    return [(int(a), int(b - a)) for a, b in zip(starts, stops)]


def plan_tasks(local_matrix: CsrMatrix, task_count: int, simd_width: int = 8,
               gap_threshold: int = DEP_GAP_THRESHOLD) -> TaskPlan:
    """Cut the local rows into aligned blocks and precompute SpMV read regions.

    Referenced-column runs separated by at most ``gap_threshold`` unused
    columns are merged into a single ``(offset, length)`` region.
    """
    if task_count < 1:
        raise PlanningError("task_count must be >= 1")
    blocks = split(local_matrix.nrows, task_count, simd_width)
    deps = []
    for start, size in blocks:
        k0, k1 = local_matrix.row_ptr[start], local_matrix.row_ptr[start + size]
        cols = np.unique(local_matrix.col_idx[k0:k1])
        deps.append(_coalesce(cols, gap_threshold))
    return TaskPlan(task_count, simd_width, blocks, deps)


@dataclass
class ColorPlan:
    color_count: int
    colors: list[int]

    def tasks_of(self, color: int) -> list[int]:
        return [t for t, c in enumerate(self.colors) if c == color]


def plan_colors(task_plan: TaskPlan, colors: int = 2) -> ColorPlan:
    if colors < 1:
        raise PlanningError("need at least one colour")
    return ColorPlan(colors, [t % colors for t in range(len(task_plan.blocks))])


def default_task_count(workers: int) -> int:
    return 4 * max(1, workers)
