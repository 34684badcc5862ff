"""Iterative solvers expressed as per-iteration task graphs."""

from __future__ import annotations

import numpy as np

from ..problem import LinearSystem
from ..runtime import Fabric
from .base import RankSolver, run_solver
from .config import GS_METHODS, GSVariant, Method, SolveReport, SolverConfig
from .krylov import BiCGStabB1Solver, BiCGStabSolver, CGNBSolver, CGSolver
from .stationary import GaussSeidelSolver, JacobiSolver

_SOLVERS = {
    Method.CG: CGSolver,
    Method.CG_NB: CGNBSolver,
    Method.BICGSTAB: BiCGStabSolver,
    Method.BICGSTAB_B1: BiCGStabB1Solver,
    Method.JACOBI: JacobiSolver,
}


def _config(config: SolverConfig | None, method: Method) -> SolverConfig:
    if config is None:
        return SolverConfig(method=method)
    return config if config.method is method else config.replace(method=method)


def solve(system: LinearSystem, config: SolverConfig | None = None, backend="seq",
          fabric: Fabric | None = None, x0: np.ndarray | None = None) -> SolveReport:
    """Solve ``system`` with ``config.method`` on ``backend`` over ``fabric``'s ranks."""
    config = config or SolverConfig()
    if config.method in GS_METHODS:
        return run_solver(GaussSeidelSolver, system, config, backend, fabric, x0,
                          variant=GS_METHODS[config.method])
    return run_solver(_SOLVERS[config.method], system, config, backend, fabric, x0)


def solve_cg(system, config=None, backend="seq", fabric=None, x0=None) -> SolveReport:
    return solve(system, _config(config, Method.CG), backend, fabric, x0)


def solve_cg_nb(system, config=None, backend="seq", fabric=None, x0=None) -> SolveReport:
    return solve(system, _config(config, Method.CG_NB), backend, fabric, x0)


def solve_bicgstab(system, config=None, backend="seq", fabric=None, x0=None) -> SolveReport:
    return solve(system, _config(config, Method.BICGSTAB), backend, fabric, x0)


def solve_bicgstab_b1(system, config=None, backend="seq", fabric=None, x0=None) -> SolveReport:
    return solve(system, _config(config, Method.BICGSTAB_B1), backend, fabric, x0)


def solve_jacobi(system, config=None, backend="seq", fabric=None, x0=None) -> SolveReport:
    return solve(system, _config(config, Method.JACOBI), backend, fabric, x0)


def solve_gs_symmetric(system, config=None, backend="seq", fabric=None, x0=None,
                       variant: GSVariant | str = GSVariant.SEQUENTIAL) -> SolveReport:
    variant = GSVariant(getattr(variant, "value", variant))
    method = {v: m for m, v in GS_METHODS.items()}[variant]
    return solve(system, _config(config, method), backend, fabric, x0)


__all__ = [
    "GSVariant",
    "Method",
    "RankSolver",
    "SolveReport",
    "SolverConfig",
    "run_solver",
    "solve",
    "solve_bicgstab",
    "solve_bicgstab_b1",
    "solve_cg",
    "solve_cg_nb",
    "solve_gs_symmetric",
    "solve_jacobi",
]
