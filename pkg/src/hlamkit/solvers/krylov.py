"""CG, CG-NB, BiCGStab and BiCGStab-B1 as per-iteration task graphs.

Every method keeps its scalars in ``self.s``. Reductions are declared as
graph nodes, so the task backend can overlap them with whatever compute
does not depend on their result; the sequential and fork-join backends
block on each one.
"""

from __future__ import annotations

import math

from .. import kernels as K
from ..errors import NumericalBreakdown
from .base import RankSolver, sqrt_abs

TINY = 1e-300


def _safe_div(num: float, den: float, what: str) -> float:
    if abs(den) < TINY:
        raise NumericalBreakdown(f"{what}: denominator {den!r} vanished")
    return num / den


class CGSolver(RankSolver):
    """Classical CG: two blocking reductions per iteration."""

    def setup_graph(self):
        r, p = self.vec("r"), self.vec("p")
        c = self.counter

        def copy(t, lo, hi):
            K.axpby(1.0, r, 0.0, r, p, lo, hi, c)

        return self.graph(self.residual_nodes("r", "rr"),
                          self.blockwise("p=r", copy, reads=["r"], writes=["p"]),
                          self.reduce("rr0", ["rr"], ["alpha_n"]))

    def iteration_graph(self):
        A, s, c = self.A, self.s, self.counter
        x, r, p, Ap = self.vec("x"), self.vec("r"), self.vec("p"), self.vec("Ap")
        pAp, rr = self.partial("pAp"), self.partial("rr")

        def spmv(t, lo, hi):
            K.spmv(A, p, Ap, lo, hi, c)
            pAp[t] = K.dot(p, Ap, lo, hi, c)

        def set_alpha():
            s["alpha"] = _safe_div(s["alpha_n"], s["alpha_d"], "CG p.Ap")

        def update(t, lo, hi):
            a = s["alpha"]
            K.axpby(a, p, 1.0, x, x, lo, hi, c)
            K.axpby(-a, Ap, 1.0, r, r, lo, hi, c)
            rr[t] = K.dot(r, r, lo, hi, c)

        def set_beta():
            s["beta"] = s["rr"] / s["alpha_n"]

        def direction(t, lo, hi):
            K.axpby(1.0, r, s["beta"], p, p, lo, hi, c)

        return self.graph(
            self.halo("p"),
            self.blockwise("spmv", spmv, reads=["p"], spmv_reads=["p"], writes=["Ap"], partials=["pAp"]),
            self.reduce("alpha_d", ["pAp"], ["alpha_d"], set_alpha),
            self.blockwise("update", update, reads=["p", "Ap"], writes=["x", "r"], scalars=["alpha_d"],
                           partials=["rr"]),
            self.reduce("alpha_n", ["rr"], ["rr"], set_beta),
            self.blockwise("direction", direction, reads=["r"], writes=["p"], scalars=["rr"]),
        )

    def iterate(self):
        self.run(self.setup_graph(), iteration=0)
        self.history.append(math.sqrt(self.s["alpha_n"]))
        self.snapshot()
        self.start_clock()
        graph = self.iteration_graph()
        j = 0
        while True:
            if self.history[-1] < self.threshold() or self.s["alpha_n"] == 0.0:
                return True, j
            if j >= self.cfg.max_iterations:
                return False, j
            j += 1
            self.iteration = j
            self.run(graph)
            self.s["alpha_n"] = self.s["rr"]
            self.history.append(math.sqrt(self.s["alpha_n"]))
            self.end_iteration()
            self.snapshot()


class CGNBSolver(RankSolver):
    """CG with A.p recovered from A.r, so neither reduction has to block.

    Iteration j produces r_j and x_j, with x advanced through
    ``alpha_{j-1} p_{j-1}`` written as a multiple of (p_j - r_j). On exit
    one more step ``x += alpha p`` is applied; it is not part of
    ``iterates``, which therefore line up with CG's x_0 .. x_K.
    """

    def setup_graph(self):
        A, c = self.A, self.counter
        r, p, Ap = self.vec("r"), self.vec("p"), self.vec("Ap")
        pAp = self.partial("pAp")

        def copy(t, lo, hi):
            K.axpby(1.0, r, 0.0, r, p, lo, hi, c)

        def spmv(t, lo, hi):
            K.spmv(A, p, Ap, lo, hi, c)
            pAp[t] = K.dot(Ap, p, lo, hi, c)

        return self.graph(
            self.residual_nodes("r", "rr"),
            self.blockwise("p=r", copy, reads=["r"], writes=["p"]),
            self.halo("p"),
            self.blockwise("spmv", spmv, reads=["p"], spmv_reads=["p"], writes=["Ap"], partials=["pAp"]),
            self.reduce("init", ["rr", "pAp"], ["alpha_n", "alpha_d"]),
        )

    def iteration_graph(self):
        A, s, c = self.A, self.s, self.counter
        x, r, p, Ap, Ar = self.vec("x"), self.vec("r"), self.vec("p"), self.vec("Ap"), self.vec("Ar")
        rr, pAp = self.partial("rr"), self.partial("pAp")

        # Tk 0
        def residual(t, lo, hi):
            K.axpby(-s["alpha"], Ap, 1.0, r, r, lo, hi, c)
            rr[t] = K.dot(r, r, lo, hi, c)

        def set_ratio():
            s["ratio"] = s["rr"] / s["alpha_n"]

        # Tk 1
        def spmv(t, lo, hi):
            K.spmv(A, r, Ar, lo, hi, c)

        # Tk 2
        def direction(t, lo, hi):
            if s["rr"] == 0.0:
                pAp[t] = 0.0
                return
            g = s["ratio"]
            K.axpby(1.0, Ar, g, Ap, Ap, lo, hi, c)
            K.axpby(1.0, r, g, p, p, lo, hi, c)
            pAp[t] = K.dot(Ap, p, lo, hi, c)

        # Tk 3
        def solution(t, lo, hi):
            if s["rr"] == 0.0:
                # r_j vanished: p_j is undefined, take the plain CG step
                K.axpby(s["alpha"], p, 1.0, x, x, lo, hi, c)
                return
            coef = s["alpha_n"] ** 2 / (s["alpha_d"] * s["rr"])
            K.triad(coef, p, -coef, r, 1.0, x, lo, hi, c)

        return self.graph(
            self.blockwise("residual", residual, reads=["Ap"], writes=["r"], partials=["rr"]),
            self.reduce("alpha_n", ["rr"], ["rr"], set_ratio),
            self.halo("r"),
            self.blockwise("spmv", spmv, spmv_reads=["r"], writes=["Ar"]),
            self.blockwise("direction", direction, reads=["Ar", "r"], writes=["Ap", "p"], scalars=["rr"],
                           partials=["pAp"]),
            self.reduce("alpha_d", ["pAp"], ["pAp"]),
            self.blockwise("solution", solution, reads=["p", "r"], writes=["x"], scalars=["rr"]),
        )

    def final_graph(self):
        s, c = self.s, self.counter
        x, p = self.vec("x"), self.vec("p")

        def step(t, lo, hi):
            K.axpby(s["alpha"], p, 1.0, x, x, lo, hi, c)

        return self.graph(self.blockwise("final", step, reads=["p"], writes=["x"]))

    def iterate(self):
        s = self.s
        self.run(self.setup_graph(), iteration=0)
        self.history.append(math.sqrt(s["alpha_n"]))
        self.snapshot()
        if self.history[0] < self.threshold() or s["alpha_n"] == 0.0:
            return True, 0
        s["alpha"] = _safe_div(s["alpha_n"], s["alpha_d"], "CG-NB A.p.p")
        self.start_clock()
        graph = self.iteration_graph()
        j = 0
        while True:
            if self.history[-1] < self.threshold():
                if s["alpha_n"] != 0.0:
                    self.run(self.final_graph(), iteration=j + 1)
                return True, j
            if j >= self.cfg.max_iterations:
                return False, j
            j += 1
            self.iteration = j
            self.run(graph)
            s["alpha_n"], s["alpha_d"] = s["rr"], s["pAp"]
            self.history.append(math.sqrt(s["alpha_n"]))
            if s["alpha_n"] != 0.0:
                s["alpha"] = _safe_div(s["alpha_n"], s["alpha_d"], "CG-NB A.p.p")
            self.end_iteration()
            self.snapshot()


class _BiCGStabBase(RankSolver):
    """Shared setup and restart bookkeeping of both BiCGStab forms.

    The shadow residual is r' = r_0/sqrt(beta_0), so alpha_n = r.r' starts
    at sqrt(beta_0). A restart (sqrt|alpha_n| below ``restart_epsilon``)
    resets p = r and r' = r/sqrt(beta), which makes alpha_n = sqrt(beta).
    """

    def setup_graph(self):
        s, c = self.s, self.counter
        r, p, rs = self.vec("r"), self.vec("p"), self.vec("rs")

        def init(t, lo, hi):
            K.axpby(1.0, r, 0.0, r, p, lo, hi, c)
            if s["beta"] > 0.0:
                K.axpby(1.0 / math.sqrt(s["beta"]), r, 0.0, r, rs, lo, hi, c)

        return self.graph(self.residual_nodes("r", "rr"),
                          self.reduce("beta0", ["rr"], ["beta"]),
                          self.blockwise("init", init, reads=["r"], writes=["p", "rs"], scalars=["beta"]))

    def start(self):
        self.run(self.setup_graph(), iteration=0)
        self.s["alpha_n"] = math.sqrt(self.s["beta"])
        self.history.append(math.sqrt(self.s["beta"]))
        self.consecutive_restarts = 0
        self.snapshot()
        self.start_clock()

    def decide_restart(self):
        """Runs in the store of the (alpha_n, beta) reduction."""
        s = self.s
        inject = self.cfg.inject_alpha_n
        if inject and self.iteration in inject:
            s["an"] = float(inject[self.iteration])
        if s["omega"] == 0.0 and s["bn"] != 0.0:
            raise NumericalBreakdown("BiCGStab: A.s vanished while the residual did not")
        s["restart"] = s["bn"] != 0.0 and sqrt_abs(s["an"]) < self.cfg.restart_epsilon
        if s["restart"]:
            self.restart_count += 1
            self.consecutive_restarts += 1
            if self.consecutive_restarts > self.cfg.max_restarts:
                raise NumericalBreakdown(f"BiCGStab: more than {self.cfg.max_restarts} consecutive restarts")
        else:
            self.consecutive_restarts = 0

    def set_omega(self):
        s = self.s
        s["omega"] = 0.0 if abs(s["tt"]) < TINY else s["ts"] / s["tt"]

    def set_alpha(self):
        s = self.s
        s["alpha"] = _safe_div(s["alpha_n"], s["alpha_d"], "BiCGStab A.p.r'")

    def end_step(self):
        s = self.s
        s["beta"] = s["bn"]
        s["alpha_n"] = math.sqrt(s["bn"]) if s["restart"] else s["an"]
        self.history.append(math.sqrt(s["beta"]))
        self.end_iteration()
        self.snapshot()

    def restart_direction(self, t, lo, hi):
        c, r = self.counter, self.vec("r")
        K.axpby(1.0, r, 0.0, r, self.vec("p"), lo, hi, c)
        K.axpby(1.0 / math.sqrt(self.s["bn"]), r, 0.0, r, self.vec("rs"), lo, hi, c)


class BiCGStabSolver(_BiCGStabBase):
    """Classical BiCGStab: three blocking reductions per iteration."""

    def iteration_graph(self):
        A, s, c = self.A, self.s, self.counter
        x, r, p, rs = self.vec("x"), self.vec("r"), self.vec("p"), self.vec("rs")
        v, sv, tv = self.vec("v"), self.vec("s"), self.vec("t")
        vr, ts, tt, an, bn = (self.partial(k) for k in ("vr", "ts", "tt", "an", "bn"))

        def spmv_p(t, lo, hi):
            K.spmv(A, p, v, lo, hi, c)
            vr[t] = K.dot(v, rs, lo, hi, c)

        def s_update(t, lo, hi):
            K.axpby(1.0, r, -s["alpha"], v, sv, lo, hi, c)

        def spmv_s(t, lo, hi):
            K.spmv(A, sv, tv, lo, hi, c)
            ts[t] = K.dot(tv, sv, lo, hi, c)
            tt[t] = K.dot(tv, tv, lo, hi, c)

        def update(t, lo, hi):
            K.triad(s["alpha"], p, s["omega"], sv, 1.0, x, lo, hi, c)
            K.axpby(1.0, sv, -s["omega"], tv, r, lo, hi, c)
            an[t] = K.dot(r, rs, lo, hi, c)
            bn[t] = K.dot(r, r, lo, hi, c)

        def direction(t, lo, hi):
            if s["restart"]:
                self.restart_direction(t, lo, hi)
            elif s["bn"] != 0.0:
                g = (s["an"] / s["alpha_n"]) * (s["alpha"] / s["omega"])
                K.triad(1.0, r, -g * s["omega"], v, g, p, lo, hi, c)

        return self.graph(
            self.halo("p"),
            self.blockwise("spmv:p", spmv_p, reads=["rs"], spmv_reads=["p"], writes=["v"], partials=["vr"]),
            self.reduce("alpha_d", ["vr"], ["alpha_d"], self.set_alpha),
            self.blockwise("s", s_update, reads=["r", "v"], writes=["s"], scalars=["alpha_d"]),
            self.halo("s"),
            self.blockwise("spmv:s", spmv_s, reads=["s"], spmv_reads=["s"], writes=["t"], partials=["ts", "tt"]),
            self.reduce("omega", ["ts", "tt"], ["ts", "tt"], self.set_omega),
            self.blockwise("update", update, reads=["p", "s", "t", "rs"], writes=["x", "r"],
                           scalars=["ts"], partials=["an", "bn"]),
            self.reduce("alpha_n", ["an", "bn"], ["an", "bn"], self.decide_restart),
            self.blockwise("direction", direction, reads=["r", "v"], writes=["p", "rs"], scalars=["an"]),
        )

    def iterate(self):
        self.start()
        graph = self.iteration_graph()
        j = 0
        while True:
            if self.history[-1] < self.threshold() or self.s["beta"] == 0.0:
                return True, j
            if j >= self.cfg.max_iterations:
                return False, j
            j += 1
            self.iteration = j
            self.run(graph)
            self.end_step()


class BiCGStabB1Solver(_BiCGStabBase):
    """BiCGStab reordered so only the A.p.r' reduction has to block.

    The omega reduction overlaps ``x += alpha p`` and the (alpha_n, beta)
    reduction overlaps ``x += omega s`` and ``p -= omega A.p``. The exit
    test on sqrt(beta_j) sits mid-iteration, so the final pass runs only
    the first half and finishes with ``x += omega s``.
    """

    def first_half(self):
        A, s, c = self.A, self.s, self.counter
        x, r, p, rs = self.vec("x"), self.vec("r"), self.vec("p"), self.vec("rs")
        Ap, sv, As = self.vec("Ap"), self.vec("s"), self.vec("As")
        dr, ss, aa = self.partial("dr"), self.partial("ts"), self.partial("tt")

        # Tk 0
        def spmv_p(t, lo, hi):
            K.spmv(A, p, Ap, lo, hi, c)
            dr[t] = K.dot(Ap, rs, lo, hi, c)

        # Tk 1
        def s_update(t, lo, hi):
            K.axpby(1.0, r, -s["alpha"], Ap, sv, lo, hi, c)

        # Tk 2
        def spmv_s(t, lo, hi):
            K.spmv(A, sv, As, lo, hi, c)
            ss[t] = K.dot(As, sv, lo, hi, c)
            aa[t] = K.dot(As, As, lo, hi, c)

        # Tk 3
        def half_x(t, lo, hi):
            K.axpby(s["alpha"], p, 1.0, x, x, lo, hi, c)

        return [
            self.halo("p"),
            *self.blockwise("spmv:p", spmv_p, reads=["rs"], spmv_reads=["p"], writes=["Ap"], partials=["dr"]),
            self.reduce("alpha_d", ["dr"], ["alpha_d"], self.set_alpha),
            *self.blockwise("s", s_update, reads=["r", "Ap"], writes=["s"], scalars=["alpha_d"]),
            self.halo("s"),
            *self.blockwise("spmv:s", spmv_s, reads=["s"], spmv_reads=["s"], writes=["As"],
                            partials=["ts", "tt"]),
            self.reduce("omega", ["ts", "tt"], ["ts", "tt"], self.set_omega),
            *self.blockwise("x+alpha*p", half_x, reads=["p"], writes=["x"], scalars=["alpha_d"]),
        ]

    def second_x(self):
        s, c = self.s, self.counter
        x, sv = self.vec("x"), self.vec("s")

        def body(t, lo, hi):
            K.axpby(s["omega"], sv, 1.0, x, x, lo, hi, c)

        return self.blockwise("x+omega*s", body, reads=["s"], writes=["x"], scalars=["ts"])

    def iteration_graph(self):
        s, c = self.s, self.counter
        r, p, rs = self.vec("r"), self.vec("p"), self.vec("rs")
        Ap, sv, As = self.vec("Ap"), self.vec("s"), self.vec("As")
        an, bn = self.partial("an"), self.partial("bn")

        # Tk 4
        def residual(t, lo, hi):
            K.axpby(1.0, sv, -s["omega"], As, r, lo, hi, c)
            an[t] = K.dot(r, rs, lo, hi, c)
            bn[t] = K.dot(r, r, lo, hi, c)

        # Tk 5
        def half_p(t, lo, hi):
            K.axpby(-s["omega"], Ap, 1.0, p, p, lo, hi, c)

        # Tk 6 / Tk 7
        def direction(t, lo, hi):
            if s["restart"]:
                self.restart_direction(t, lo, hi)
            elif s["bn"] != 0.0:
                K.axpby(1.0, r, s["an"] / (s["alpha_d"] * s["omega"]), p, p, lo, hi, c)

        return self.graph(
            self.first_half(),
            self.second_x(),
            self.blockwise("residual", residual, reads=["s", "As", "rs"], writes=["r"], scalars=["ts"],
                           partials=["an", "bn"]),
            self.reduce("alpha_n", ["an", "bn"], ["an", "bn"], self.decide_restart),
            self.blockwise("p-omega*Ap", half_p, reads=["Ap"], writes=["p"], scalars=["ts"]),
            self.blockwise("direction", direction, reads=["r"], writes=["p", "rs"], scalars=["an"]),
        )

    def iterate(self):
        self.start()
        graph = self.iteration_graph()
        j = 0
        while True:
            if self.s["beta"] == 0.0:
                return True, j
            if self.history[-1] < self.threshold():
                self.run(self.graph(self.first_half(), self.second_x()), iteration=j + 1)
                if self.iterates is not None:
                    self.iterates[-1] = self.solution().copy()
                return True, j
            if j >= self.cfg.max_iterations:
                return False, j
            j += 1
            self.iteration = j
            self.run(graph)
            self.end_step()
