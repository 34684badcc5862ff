from __future__ import annotations

import csv
import enum
import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping

import numpy as np

from ..runtime.trace import TraceLog


class Method(enum.Enum):
    JACOBI = "jacobi"
    GS = "gs"
    GS_REDBLACK = "gs-rb"
    GS_RELAXED = "gs-relaxed"
    CG = "cg"
    CG_NB = "cg-nb"
    BICGSTAB = "bicgstab"
    BICGSTAB_B1 = "bicgstab-b1"

    @property
    def classical(self) -> "Method":
        """The baseline variant used to normalise efficiencies."""
        return {Method.CG_NB: Method.CG, Method.BICGSTAB_B1: Method.BICGSTAB,
                Method.GS_REDBLACK: Method.GS, Method.GS_RELAXED: Method.GS}.get(self, self)

    @property
    def is_krylov(self) -> bool:
        return self in (Method.CG, Method.CG_NB, Method.BICGSTAB, Method.BICGSTAB_B1)


class GSVariant(enum.Enum):
    SEQUENTIAL = "sequential"
    RED_BLACK = "red-black"
    RELAXED = "relaxed"


GS_METHODS = {Method.GS: GSVariant.SEQUENTIAL, Method.GS_REDBLACK: GSVariant.RED_BLACK,
              Method.GS_RELAXED: GSVariant.RELAXED}


@dataclass(frozen=True)
class SolverConfig:
    """Algorithm choice, tolerances and execution granularity.

    ``epsilon`` is compared against the absolute residual norm unless
    ``relative`` is set, in which case it is scaled by the initial residual.
    ``task_count=None`` means four tasks per worker.

    ``inject_alpha_n`` overrides the reduced ``r . r'`` of the given
    BiCGStab iterations (testing hook for the restart path), and
    ``callback(iteration, rank, vectors, scalars)`` runs on every rank after
    each iteration.
    """

    method: Method = Method.CG
    epsilon: float = 1e-6
    restart_epsilon: float = 1e-5
    max_iterations: int = 5000
    task_count: int | None = None
    simd_width: int = 8
    workers: int | None = None
    max_restarts: int = 10
    relative: bool = False
    instrument: bool = True
    keep_iterates: bool = False
    debug: bool = False
    inject_alpha_n: Mapping[int, float] | None = None
    callback: Callable | None = None

    def __post_init__(self):
        object.__setattr__(self, "method", Method(getattr(self.method, "value", self.method)))
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if not self.restart_epsilon > 0:
            raise ValueError("restart_epsilon must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.task_count is not None and self.task_count < 1:
            raise ValueError("task_count must be >= 1")
        if self.simd_width < 1:
            raise ValueError("simd_width must be >= 1")

    def replace(self, **changes) -> "SolverConfig":
        from dataclasses import replace

        return replace(self, **changes)


@dataclass(eq=False)
class SolveReport:
    method: Method
    backend: str
    ranks: int
    converged: bool
    iterations: int
    residual_history: list[float]
    restart_count: int = 0
    barriers: dict[int, tuple[int, int]] = field(default_factory=dict)
    accesses: list[int] = field(default_factory=list)
    wall_time: float = 0.0
    true_residual: float = float("nan")
    x: np.ndarray | None = field(default=None, repr=False)
    iterates: list[np.ndarray] | None = field(default=None, repr=False)
    trace: TraceLog | None = field(default=None, repr=False)
    workers: int = 1
    task_count: int = 1

    @property
    def final_residual(self) -> float:
        return self.residual_history[-1] if self.residual_history else float("nan")

    def barrier_profile(self) -> tuple[int, int] | None:
        """Most common ``(blocking, overlapped)`` pair over the regular iterations."""
        if not self.barriers:
            return None
        return Counter(self.barriers.values()).most_common(1)[0][0]

    def to_dict(self) -> dict:
        return {
            "method": self.method.value,
            "backend": self.backend,
            "ranks": self.ranks,
            "workers": self.workers,
            "task_count": self.task_count,
            "converged": self.converged,
            "iterations": self.iterations,
            "final_residual": self.final_residual,
            "true_residual": self.true_residual,
            "restart_count": self.restart_count,
            "wall_time": self.wall_time,
            "barriers": {str(k): list(v) for k, v in self.barriers.items()},
            "barrier_profile": self.barrier_profile(),
            "accesses": self.accesses,
            "residual_history": self.residual_history,
        }

    def to_json(self, path: str | Path | None = None, **kw) -> str:
        text = json.dumps(self.to_dict(), **kw)
        if path is not None:
            Path(path).write_text(text)
        return text

    def write_residual_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "residual"])
            for k, res in enumerate(self.residual_history):
                w.writerow([k, repr(res)])
