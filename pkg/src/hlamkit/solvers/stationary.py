"""Jacobi and symmetric Gauss-Seidel.

Both check the residual of the current iterate before sweeping, so on
convergence the reported x is the iterate whose residual passed and the
iteration count is the number of sweeps that produced it. Across ranks the
Gauss-Seidel sweeps read halo values from the start of the iteration
(block Jacobi between ranks, Gauss-Seidel inside a rank).
"""

from __future__ import annotations

import math

from .. import kernels as K
from ..runtime import compute_task
from .base import RankSolver
from .config import GSVariant


class JacobiSolver(RankSolver):
    """Double-buffered Jacobi; the sweep also returns the old residual."""

    def sweep_graph(self, src: str, dst: str):
        A, b, c = self.A, self.b, self.counter
        x, y = self.vec(src), self.vec(dst)
        res = self.partial("res")

        def body(t, lo, hi):
            res[t] = K.jacobi_sweep(A, b, x, y, lo, hi, c)

        return self.graph(self.halo(src),
                          self.blockwise("jacobi", body, spmv_reads=[src], writes=[dst], partials=["res"]),
                          self.reduce("residual", ["res"], ["res"]))

    def solution(self):
        return self.vec(self._current)[:self.n]

    def iterate(self):
        self.check_diagonal()
        self._current = "x"
        graphs = {"x": self.sweep_graph("x", "y"), "y": self.sweep_graph("y", "x")}
        self.snapshot()
        self.start_clock()
        k = 0
        while True:
            self.iteration = k + 1
            self.run(graphs[self._current])
            self.history.append(math.sqrt(self.s["res"]))
            if self.history[-1] < self.threshold():
                return True, k
            if k >= self.cfg.max_iterations:
                return False, k
            k += 1
            self._current = "y" if self._current == "x" else "x"
            self.end_iteration()
            self.snapshot()


class GaussSeidelSolver(RankSolver):
    """Symmetric Gauss-Seidel: forward then backward sweep per iteration.

    ``SEQUENTIAL`` keeps exact sweep order through regular dependencies,
    ``RED_BLACK`` runs even blocks, then odd blocks (backward: odd, then
    even), and ``RELAXED`` lets every block read and write all of x with
    only forward-before-backward ordering per block.
    """

    def __init__(self, *args, variant: GSVariant = GSVariant.SEQUENTIAL, **kw):
        super().__init__(*args, **kw)
        self.variant = GSVariant(variant)

    def residual_graph(self):
        A, b, c = self.A, self.b, self.counter
        x = self.vec("x")
        res = self.partial("res")

        def body(t, lo, hi):
            res[t] = K.residual_sq(A, b, x, lo, hi, c)

        return self.graph(self.halo("x"),
                          self.blockwise("residual", body, spmv_reads=["x"], partials=["res"]),
                          self.reduce("residual", ["res"], ["res"]))

    def _sweep_task(self, t, lo, hi, backward, after=()):
        A, b, c, x = self.A, self.b, self.counter, self.vec("x")

        def run():
            K.gs_sweep(A, b, x, lo, hi, backward=backward, counter=c)

        label = "gs:backward" if backward else "gs:forward"
        if self.variant is GSVariant.RELAXED:
            whole = [("x", 0, self.n_ext)]
            return compute_task(label, run, whole, whole, relaxed={"x"}, after=after)
        reads = [("x", off, ln) for off, ln in self.tasks.spmv_deps[t]]
        return compute_task(label, run, reads, [("x", lo, hi - lo)], after=after)

    def sweep_graph(self):
        blocks = list(self.blocks())
        nodes = []
        if self.variant is GSVariant.SEQUENTIAL:
            nodes += [self._sweep_task(t, lo, hi, False) for t, lo, hi in blocks]
            nodes += [self._sweep_task(t, lo, hi, True) for t, lo, hi in reversed(blocks)]
        elif self.variant is GSVariant.RED_BLACK:
            red = [blk for blk in blocks if blk[0] % 2 == 0]
            black = [blk for blk in blocks if blk[0] % 2 == 1]
            prev: list = []
            for phase, backward in ((red, False), (black, False), (black, True), (red, True)):
                order = reversed(phase) if backward else phase
                cur = [self._sweep_task(t, lo, hi, backward, after=prev) for t, lo, hi in order]
                nodes += cur
                prev = cur or prev
        else:
            fwd = {t: self._sweep_task(t, lo, hi, False) for t, lo, hi in blocks}
            nodes += list(fwd.values())
            nodes += [self._sweep_task(t, lo, hi, True, after=[fwd[t]]) for t, lo, hi in reversed(blocks)]
        return self.graph(nodes)

    def iterate(self):
        self.check_diagonal()
        residual, sweep = self.residual_graph(), self.sweep_graph()
        self.snapshot()
        self.start_clock()
        k = 0
        while True:
            self.iteration = k + 1
            self.run(residual)
            self.history.append(math.sqrt(self.s["res"]))
            if self.history[-1] < self.threshold():
                return True, k
            if k >= self.cfg.max_iterations:
                return False, k
            self.run(sweep)
            k += 1
            self.end_iteration()
            self.snapshot()
