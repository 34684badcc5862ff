"""Execution backends, the simulated rank fabric and the event tracer."""

from .fabric import (
    CollectiveHandle,
    Fabric,
    HaloHandle,
    Mode,
    RankContext,
    allreduce_sum,
    cap_workers,
    default_workers,
    exchange_externals,
    standalone_context,
)
from .graph import Backend, TaskGraph, TaskNode, allreduce_task, compute_task, halo_task, run_graph
from .trace import Event, TraceLog, collective_ops, count_barriers

__all__ = [
    "Backend",
    "CollectiveHandle",
    "Event",
    "Fabric",
    "HaloHandle",
    "Mode",
    "RankContext",
    "TaskGraph",
    "TaskNode",
    "TraceLog",
    "allreduce_sum",
    "allreduce_task",
    "cap_workers",
    "collective_ops",
    "compute_task",
    "count_barriers",
    "default_workers",
    "exchange_externals",
    "halo_task",
    "run_graph",
    "standalone_context",
]
