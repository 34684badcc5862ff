"""hlamkit: hybrid-parallel iterative solvers over HPCG-style stencil systems."""

from .decomposition import plan_colors, plan_ranks, plan_tasks, split
from .errors import (
    ContractViolation,
    FabricError,
    GenerationError,
    HlamError,
    NumericalBreakdown,
    PlanningError,
    ProtocolError,
    SchedulingError,
    SetupError,
)
from .kernels import AccessCounter, CostModel, estimate_accesses
from .problem import CsrMatrix, GridSpec, LinearSystem, Stencil, average_nnz_per_row, generate
from .runtime import Backend, Fabric, TraceLog, count_barriers, run_graph
from .solvers import (
    GSVariant,
    Method,
    SolveReport,
    SolverConfig,
    solve,
    solve_bicgstab,
    solve_bicgstab_b1,
    solve_cg,
    solve_cg_nb,
    solve_gs_symmetric,
    solve_jacobi,
)

__version__ = "0.1.0"

__all__ = [
    "AccessCounter",
    "Backend",
    "ContractViolation",
    "CostModel",
    "CsrMatrix",
    "Fabric",
    "FabricError",
    "GSVariant",
    "GenerationError",
    "GridSpec",
    "HlamError",
    "LinearSystem",
    "Method",
    "NumericalBreakdown",
    "PlanningError",
    "ProtocolError",
    "SchedulingError",
    "SetupError",
    "SolveReport",
    "SolverConfig",
    "Stencil",
    "TraceLog",
    "average_nnz_per_row",
    "count_barriers",
    "estimate_accesses",
    "generate",
    "plan_colors",
    "plan_ranks",
    "plan_tasks",
    "run_graph",
    "solve",
    "solve_bicgstab",
    "solve_bicgstab_b1",
    "solve_cg",
    "solve_cg_nb",
    "solve_gs_symmetric",
    "solve_jacobi",
    "split",
]
