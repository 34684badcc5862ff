"""Per-rank solver scaffolding and the multi-rank driver.

A method subclasses :class:`RankSolver`, builds its per-iteration task
graphs once (bodies close over the rank's vectors and scalar table) and
replays them every iteration. Scalars produced by allreduces live in
``self.s``; per-block dot partials live in ``self.partials`` and are summed
in block order before the cross-rank reduction, so every backend sees the
same rounding.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .. import kernels as K
from ..decomposition import LocalSystem, TaskPlan, local_system, plan_ranks, plan_tasks
from ..problem import LinearSystem
from ..runtime import (
    Backend,
    Fabric,
    RankContext,
    TaskGraph,
    allreduce_task,
    cap_workers,
    compute_task,
    count_barriers,
    default_workers,
    halo_task,
    run_graph,
)
from ..runtime.trace import TraceLog
from .config import SolverConfig, SolveReport


@dataclass
class RankResult:
    x: np.ndarray
    converged: bool
    iterations: int
    residual_history: list[float]
    restart_count: int
    accesses: list[int]
    wall_time: float
    iterates: list[np.ndarray] | None


class RankSolver:
    def __init__(self, ctx: RankContext, local: LocalSystem, tasks: TaskPlan, config: SolverConfig,
                 backend: Backend, x0: np.ndarray | None = None):
        self.ctx = ctx
        self.local = local
        self.A = local.matrix
        self.b = local.rhs
        self.info = local.info
        self.n = local.n_local
        self.n_ext = local.n_ext
        self.tasks = tasks
        self.cfg = config
        self.backend = backend
        self.counter = K.AccessCounter(config.instrument)
        self.vectors: dict[str, np.ndarray] = {}
        self.partials: dict[str, np.ndarray] = {}
        self.s: dict[str, float] = {}
        self.iteration = 0
        self.history: list[float] = []
        self.accesses: list[int] = []
        self.iterates: list[np.ndarray] | None = [] if config.keep_iterates else None
        self.restart_count = 0
        x = self.vec("x")
        if x0 is not None:
            x[:self.n] = x0[self.info.row_start:self.info.row_stop]
        ctx.fabric.register_buffers(ctx.rank, x)

    # -- buffers -------------------------------------------------------------

    def vec(self, name: str) -> np.ndarray:
        v = self.vectors.get(name)
        if v is None:
            v = self.vectors[name] = np.zeros(self.n_ext)
            self.ctx.fabric.register_buffers(self.ctx.rank, v)
        return v

    def partial(self, name: str) -> np.ndarray:
        p = self.partials.get(name)
        if p is None:
            p = self.partials[name] = np.zeros(self.tasks.task_count)
        return p

    def blocks(self):
        """``(task index, lo, hi)`` for every nonempty block."""
        for t, (start, size) in enumerate(self.tasks.blocks):
            if size:
                yield t, start, start + size

    # -- graph building --------------------------------------------------------

    def blockwise(self, label, body, *, reads=(), writes=(), spmv_reads=(), scalars=(),
                  partials=(), group="", relaxed=(), whole=False):
        """One compute node per block calling ``body(t, lo, hi)``.

        ``reads``/``writes`` name vectors accessed on the block's own rows,
        ``spmv_reads`` vectors accessed through the block's SpMV footprint,
        ``whole=True`` widens every vector access to the full buffer.
        """
        nodes = []
        for t, lo, hi in self.blocks():
            def run(t=t, lo=lo, hi=hi):
                body(t, lo, hi)

            def span(name):
                return (name, 0, self.n_ext) if whole else (name, lo, hi - lo)

            r = [span(v) for v in reads]
            for v in spmv_reads:
                r.extend([(v, off, ln) for off, ln in self.tasks.spmv_deps[t]] if not whole else [span(v)])
            r.extend(("S:" + s, 0, 1) for s in scalars)
            w = [span(v) for v in writes] + [("P:" + p, t, 1) for p in partials]
            nodes.append(compute_task(label, run, r, w, group=group or label, relaxed=relaxed))
        return nodes

    def halo(self, name: str):
        return halo_task(f"halo:{name}", self.info, self.vec(name), name)

    def reduce(self, label: str, sources: list[str], dests: list[str], after_store=None):
        """Allreduce the block partials ``sources`` into scalars ``dests``."""
        for name in sources:
            self.partial(name)

        def local():
            out = np.empty(len(sources))
            for k, name in enumerate(sources):
                acc = 0.0
                for v in self.partials[name]:
                    acc += v
                out[k] = acc
            return out

        def store(result):
            vals = np.atleast_1d(result)
            for k, name in enumerate(dests):
                self.s[name] = float(vals[k])
            if after_store is not None:
                after_store()

        reads = [("P:" + n, 0, self.tasks.task_count) for n in sources]
        writes = [("S:" + d, 0, 1) for d in dests]
        return allreduce_task(label, local, store, reads, writes)

    def graph(self, *parts) -> TaskGraph:
        nodes = []
        for p in parts:
            if isinstance(p, list):
                nodes.extend(p)
            else:
                nodes.append(p)
        return TaskGraph(nodes)

    def run(self, graph: TaskGraph, iteration: int | None = None) -> None:
        run_graph(self.backend, graph, self.ctx, iteration=self.iteration if iteration is None else iteration,
                  debug=self.cfg.debug)

    # -- bookkeeping -----------------------------------------------------------

    def threshold(self) -> float:
        if self.cfg.relative and self.history:
            return self.cfg.epsilon * self.history[0]
        return self.cfg.epsilon

    def end_iteration(self) -> None:
        total = self.counter.total
        self.accesses.append(total - getattr(self, "_acc_mark", 0))
        self._acc_mark = total
        if self.cfg.callback is not None:
            self.cfg.callback(self.iteration, self.ctx.rank,
                              {k: v[:self.n] for k, v in self.vectors.items()}, dict(self.s))

    def snapshot(self) -> None:
        """Record the current iterate (solvers decide which x is "x_k")."""
        if self.iterates is not None:
            self.iterates.append(self.solution().copy())

    def mark_accesses(self) -> None:
        self._acc_mark = self.counter.total

    def solution(self) -> np.ndarray:
        return self.vec("x")[:self.n]

    def check_diagonal(self) -> None:
        from ..errors import SetupError

        if np.any(self.A.diagonal() == 0.0):
            raise SetupError("matrix has a zero on the diagonal")

    def iterate(self) -> tuple[bool, int]:
        raise NotImplementedError

    def solve(self) -> RankResult:
        converged, iterations, elapsed = self.timed_iterate()
        return RankResult(self.solution().copy(), converged, iterations, self.history,
                          self.restart_count, self.accesses, elapsed, self.iterates)

    def start_clock(self) -> None:
        """Called once setup is done so wall time covers the iteration loop only."""
        self._t0 = time.perf_counter()
        self.mark_accesses()

    def timed_iterate(self):
        self._t0 = time.perf_counter()
        converged, iterations = self.iterate()
        return converged, iterations, time.perf_counter() - self._t0

    def residual_nodes(self, dest: str = "r", partial: str | None = None):
        """``dest = b - A x`` (optionally with ``dest . dest`` partials) plus the x halo."""
        A, b, x, r = self.A, self.b, self.vec("x"), self.vec(dest)
        parts = self.partial(partial) if partial else None
        c = self.counter

        def body(t, lo, hi):
            K.spmv(A, x, r, lo, hi, c)
            K.axpby(1.0, b, -1.0, r, r, lo, hi, c)
            if parts is not None:
                parts[t] = K.dot(r, r, lo, hi, c)

        return [self.halo("x")] + self.blockwise(
            f"residual:{dest}", body, spmv_reads=["x"], writes=[dest],
            partials=[partial] if partial else ())


def sqrt_abs(v: float) -> float:
    return math.sqrt(abs(v))


def run_solver(solver_cls, system: LinearSystem, config: SolverConfig, backend="seq",
               fabric: Fabric | None = None, x0: np.ndarray | None = None, **solver_kw) -> SolveReport:
    """Decompose ``system`` over the fabric's ranks, solve, and gather a report."""
    backend = Backend.parse(backend)
    fabric = fabric or Fabric(1)
    fabric.trace = TraceLog()
    workers = cap_workers(config.workers or default_workers())
    task_count = config.task_count or 4 * workers
    plan = plan_ranks(system.grid, fabric.size, system.matrix)
    locals_ = [local_system(system, plan, r) for r in range(fabric.size)]

    def rank_main(ctx: RankContext) -> RankResult:
        local = locals_[ctx.rank]
        tasks = plan_tasks(local.matrix, task_count, config.simd_width)
        solver = solver_cls(ctx, local, tasks, config, backend, x0=x0, **solver_kw)
        return solver.solve()

    results: list[RankResult] = fabric.run(rank_main, workers=workers)
    first = results[0]
    x = np.concatenate([r.x for r in results])
    iterates = None
    if first.iterates is not None:
        iterates = [np.concatenate([r.iterates[k] for r in results]) for k in range(len(first.iterates))]
    accesses = [sum(r.accesses[k] for r in results) for k in range(len(first.accesses))]
    trace = fabric.trace
    barriers = {it: count_barriers(trace, it) for it in range(1, first.iterations + 1)}

    Ax = np.zeros(system.nrows)
    K.spmv(system.matrix, x, Ax)
    bnorm = np.linalg.norm(system.rhs)
    true_res = float(np.linalg.norm(system.rhs - Ax) / (bnorm if bnorm > 0 else 1.0))

    return SolveReport(
        method=config.method,
        backend=backend.value,
        ranks=fabric.size,
        converged=first.converged,
        iterations=first.iterations,
        residual_history=list(first.residual_history),
        restart_count=first.restart_count,
        barriers=barriers,
        accesses=accesses,
        wall_time=max(r.wall_time for r in results),
        true_residual=true_res,
        x=x,
        iterates=iterates,
        trace=trace,
        workers=workers,
        task_count=task_count,
    )
