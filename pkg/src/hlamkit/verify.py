"""Desk-scale acceptance checks behind ``hlamkit verify``.

Each check returns a :class:`CheckResult`; :func:`run_checks` runs a
selection and prints one line per check.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import kernels as K
from .bench import BenchSpec, run_bench, summarize
from .decomposition import local_system, plan_ranks
from .kernels import estimate_accesses
from .oracles import dense_cg, dense_jacobi, dense_symmetric_gs, relative_distance
from .problem import GridSpec, Stencil, average_nnz_per_row, generate
from .runtime import Fabric
from .solvers import Method, SolverConfig, solve

# (blocking, overlapped) per iteration
BARRIER_TABLE = {
    (Method.CG, "seq"): (2, 0), (Method.CG, "fj"): (2, 0), (Method.CG, "task"): (2, 0),
    (Method.CG_NB, "seq"): (2, 0), (Method.CG_NB, "fj"): (2, 0), (Method.CG_NB, "task"): (0, 2),
    (Method.BICGSTAB, "seq"): (3, 0), (Method.BICGSTAB, "fj"): (3, 0), (Method.BICGSTAB, "task"): (3, 0),
    (Method.BICGSTAB_B1, "seq"): (3, 0), (Method.BICGSTAB_B1, "fj"): (3, 0), (Method.BICGSTAB_B1, "task"): (1, 2),
}

ACCESS_BAND = (0.8, 1.3)


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0
    lines: list[str] = field(default_factory=list)

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name:<15} {self.seconds:6.1f}s  {self.detail}"


def _grid(text: str, stencil: int) -> GridSpec:
    return GridSpec.parse(text, Stencil.parse(stencil))


def expected_barriers(method, backend) -> tuple[int, int] | None:
    return BARRIER_TABLE.get((Method(getattr(method, "value", method)), backend))


def check_barriers(workers: int = 4) -> CheckResult:
    system = generate(_grid("8x8x8", 7))
    lines, ok = [], True
    for (method, backend), want in BARRIER_TABLE.items():
        rep = solve(system, SolverConfig(method=method, workers=workers), backend=backend, fabric=Fabric(2))
        got = set(rep.barriers.values())
        good = got == {want} and rep.converged
        ok &= good
        lines.append(f"{method.value:<12} {backend:<5} want {want} got {sorted(got)}")
    return CheckResult("barriers", ok, f"{len(BARRIER_TABLE)} method/backend pairs", lines=lines)


def check_cg_equivalence(workers: int = 4) -> CheckResult:
    lines, ok, worst = [], True, 0.0
    for g in ("8x8x8", "16x16x16"):
        for st in (7, 27):
            system = generate(_grid(g, st))
            cfg = SolverConfig(keep_iterates=True, workers=workers)
            a = solve(system, cfg.replace(method=Method.CG))
            b = solve(system, cfg.replace(method=Method.CG_NB))
            dev = max(relative_distance(x, y) for x, y in zip(b.iterates, a.iterates))
            worst = max(worst, dev)
            good = a.iterations == b.iterations and len(a.iterates) == len(b.iterates) and dev < 1e-10
            ok &= good
            lines.append(f"{g}/{st}pt iterations {a.iterations}/{b.iterations} max deviation {dev:.2e}")
    return CheckResult("cg-equivalence", ok, f"max per-iteration deviation {worst:.2e} (< 1e-10)", lines=lines)


def check_oracles(workers: int = 4) -> CheckResult:
    cases = [(Method.CG, dense_cg), (Method.JACOBI, dense_jacobi), (Method.GS, dense_symmetric_gs)]
    lines, ok, worst = [], True, 0.0
    for g in ("4x4x4", "8x8x8"):
        for st in (7, 27):
            system = generate(_grid(g, st))
            for method, oracle in cases:
                rep = solve(system, SolverConfig(method=method, keep_iterates=True, workers=workers))
                xs, _ = oracle(system.matrix, system.rhs)
                dev = max(relative_distance(x, y) for x, y in zip(rep.iterates, xs))
                worst = max(worst, dev)
                good = len(rep.iterates) == len(xs) and dev < 1e-12
                ok &= good
                lines.append(f"{g}/{st}pt {method.value:<7} iterations {rep.iterations}/{len(xs) - 1} "
                             f"max deviation {dev:.2e}")
    return CheckResult("oracles", ok, f"max iterate deviation {worst:.2e} (< 1e-12)", lines=lines)


def check_accesses(workers: int = 4) -> CheckResult:
    lines = []
    ok = math.isclose(round((estimate_accesses("cg-nb", 7, 1) - estimate_accesses("cg", 7, 1))
                            / estimate_accesses("cg", 7, 1) * 100, 1), 15.8)
    ok &= math.isclose(round((estimate_accesses("bicgstab-b1", 7, 1) - estimate_accesses("bicgstab", 7, 1))
                             / estimate_accesses("bicgstab", 7, 1) * 100, 1), 8.6)
    lines.append(f"estimate ratios at n=7: CG-NB/CG +{3 / 19:.1%}, B1/BiCGStab +{3 / 35:.1%}")
    for st in (7, 27):
        system = generate(_grid("16x16x16", st))
        nbar = average_nnz_per_row(system.matrix)
        for method in (Method.CG, Method.CG_NB, Method.BICGSTAB, Method.BICGSTAB_B1):
            rep = solve(system, SolverConfig(method=method, workers=workers), fabric=Fabric(2))
            est = estimate_accesses(method.value, nbar, system.nrows)
            ratios = [a / est for a in rep.accesses]
            good = bool(ratios) and all(ACCESS_BAND[0] <= q <= ACCESS_BAND[1] for q in ratios)
            ok &= good
            lines.append(f"{st}pt {method.value:<12} measured/estimate {min(ratios):.3f}..{max(ratios):.3f}")
    return CheckResult("accesses", ok, f"all per-iteration ratios within {ACCESS_BAND}", lines=lines)


def distributed_spmv_equal(system, ranks: int, seed: int = 0) -> bool:
    x = np.random.default_rng(seed).standard_normal(system.nrows)
    y = np.zeros(system.nrows)
    K.spmv(system.matrix, x, y)
    plan = plan_ranks(system.grid, ranks, system.matrix)
    parts = []
    for q in range(ranks):
        loc = local_system(system, plan, q)
        xl = np.concatenate([x[loc.info.row_start:loc.info.row_stop], x[loc.info.external_cols]])
        yl = np.zeros(loc.n_local)
        K.spmv(loc.matrix, xl, yl)
        parts.append(yl)
    return bool(np.array_equal(np.concatenate(parts), y))


def check_distributed(workers: int = 4) -> CheckResult:
    lines, ok, worst = [], True, 0.0
    for st in (7, 27):
        system = generate(_grid("8x8x8", st))
        for ranks in (1, 2, 4, 8):
            equal = distributed_spmv_equal(system, ranks)
            ok &= equal
            for method in Method:
                rep = solve(system, SolverConfig(method=method, workers=workers), backend="task",
                            fabric=Fabric(ranks))
                worst = max(worst, rep.true_residual)
                ok &= rep.converged and rep.true_residual < 1e-5
            lines.append(f"{st}pt ranks {ranks}: spmv bit-exact {equal}")
    return CheckResult("distributed", ok, f"worst true residual {worst:.2e} (< 1e-5)", lines=lines)


def gs_task_count(grid: GridSpec, lines_per_block: int = 4) -> int:
    """Blocks spanning a few grid lines, many blocks per z-plane."""
    return max(1, grid.nrows // (grid.nx * lines_per_block))


def check_gs_ordering(workers: int = 4) -> CheckResult:
    grid = _grid("16x16x16", 27)
    system = generate(grid)
    tc = gs_task_count(grid)
    its = {}
    for method in (Method.GS, Method.GS_RELAXED, Method.GS_REDBLACK, Method.JACOBI):
        rep = solve(system, SolverConfig(method=method, workers=workers, task_count=tc), backend="task")
        its[method] = rep.iterations if rep.converged else math.inf
    seq, rel, rb, jac = its[Method.GS], its[Method.GS_RELAXED], its[Method.GS_REDBLACK], its[Method.JACOBI]
    ok = seq <= rel <= jac and rel <= 1.1 * seq and rb <= 1.1 * seq
    return CheckResult("gs-ordering", ok,
                       f"sequential {seq}, relaxed {rel}, red-black {rb}, jacobi {jac} ({tc} tasks)")


def check_restart(workers: int = 4) -> CheckResult:
    system = generate(_grid("16x16x16", 7))
    seen: dict[int, np.ndarray] = {}
    inject = 3

    def grab(iteration, rank, vectors, scalars):
        if iteration == inject:
            seen[rank] = (vectors["rs"].copy(), vectors["r"].copy(), vectors["p"].copy())

    lines, ok = [], True
    for backend in ("seq", "task"):
        seen.clear()
        cfg = SolverConfig(method=Method.BICGSTAB_B1, inject_alpha_n={inject: 1e-12}, callback=grab, workers=workers)
        rep = solve(system, cfg, backend=backend, fabric=Fabric(2))
        rs, r, p = (np.concatenate([seen[q][k] for q in sorted(seen)]) for k in range(3))
        norm_err = abs(np.linalg.norm(rs) - 1.0)
        good = rep.converged and rep.restart_count >= 1 and norm_err < 1e-14 and np.array_equal(p, r)
        ok &= good
        lines.append(f"{backend}: restarts {rep.restart_count}, | |r'| - 1 | = {norm_err:.1e}, "
                     f"converged in {rep.iterations}")
    return CheckResult("restart", ok, "; ".join(lines), lines=lines)


def check_determinism(workers: int = 4, runs: int = 10) -> CheckResult:
    system = generate(_grid("8x8x8", 27))
    lines, ok = [], True
    for method in (Method.CG, Method.CG_NB, Method.JACOBI, Method.GS, Method.GS_REDBLACK):
        histories = {tuple(solve(system, SolverConfig(method=method, workers=workers), backend="task",
                                 fabric=Fabric(2)).residual_history) for _ in range(runs)}
        ok &= len(histories) == 1
        lines.append(f"{method.value:<7} distinct histories over {runs} runs: {len(histories)}")
    return CheckResult("determinism", ok, f"{runs} task-backend runs per method", lines=lines)


def check_bench(workers: int = 4) -> CheckResult:
    spec = BenchSpec("weak", _grid("8x8x8", 7), ranks=(1, 2, 4), backends=("seq", "task"),
                     methods=("cg", "cg-nb"), repetitions=3, workers=workers)
    table = summarize(run_bench(spec), spec)
    ref = table.cell(*table.references["cg"])
    rows = [table.cell("cg", "seq", r).rows_per_rank for r in spec.ranks]
    ok = (ref.efficiency == 1.0 and all(c.valid for c in table.cells)
          and len(table.cells) == len(spec.methods) * len(spec.backends) * len(spec.ranks)
          and all(a >= b for a, b in zip(rows, rows[1:])) and len(set(rows)) == 1)
    return CheckResult("bench", ok, f"reference efficiency {ref.efficiency}, rows per rank {rows}",
                       lines=table.format().splitlines())


CHECKS: dict[str, Callable[..., CheckResult]] = {
    "barriers": check_barriers,
    "cg-equivalence": check_cg_equivalence,
    "oracles": check_oracles,
    "accesses": check_accesses,
    "distributed": check_distributed,
    "gs-ordering": check_gs_ordering,
    "restart": check_restart,
    "determinism": check_determinism,
    "bench": check_bench,
}


def run_checks(names=None, workers: int = 4, verbose: bool = False, out=print) -> list[CheckResult]:
    names = list(names or CHECKS)
    unknown = [n for n in names if n not in CHECKS]
    if unknown:
        raise ValueError(f"unknown checks {unknown}; choose from {list(CHECKS)}")
    results = []
    for name in names:
        t0 = time.perf_counter()
        try:
            res = CHECKS[name](workers=workers)
        except Exception as exc:  # noqa: BLE001 - report and continue
            res = CheckResult(name, False, f"raised {type(exc).__name__}: {exc}")
        res.seconds = time.perf_counter() - t0
        results.append(res)
        out(res.line())
        if verbose or name in ("barriers", "cg-equivalence"):
            for line in res.lines:
                out("    " + line)
    return results
