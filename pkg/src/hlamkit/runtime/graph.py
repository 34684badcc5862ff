"""Dependency-annotated task graphs and the three execution backends.

Nodes declare the buffer regions they read and write. Two nodes conflict
when they touch overlapping regions of the same buffer and at least one of
them writes; a conflicting pair keeps its submission order. Buffers a node
lists in ``relaxed`` are exempt from conflict checks against other nodes
that relax the same buffer (the element-wise races are intentional).

Backends:

* ``SEQUENTIAL`` runs nodes one by one in submission order, collectives block.
* ``FORK_JOIN`` runs each run of same-group compute nodes as a parallel
  region (split into dependency waves if needed) with a barrier after it;
  collectives block.
* ``TASK_GRAPH`` dispatches any node whose predecessors finished. Halo
  exchanges and allreduces become dependencies instead of waits. Compute
  that feeds no pending collective is kept back until a collective is in
  flight, so it fills the reduction latency instead of running early.
"""

from __future__ import annotations

import enum
import heapq
import queue
from dataclasses import dataclass, field
from typing import Callable

from ..errors import ContractViolation, ProtocolError, SchedulingError
from .fabric import Mode, RankContext, allreduce_sum, exchange_externals, standalone_context
from .trace import TraceLog

Region = tuple[str, int, int]  # (buffer id, offset, length)


class Backend(enum.Enum):
    SEQUENTIAL = "seq"
    FORK_JOIN = "fj"
    TASK_GRAPH = "task"

    @classmethod
    def parse(cls, value) -> "Backend":
        if isinstance(value, Backend):
            return value
        aliases = {"sequential": "seq", "forkjoin": "fj", "fork-join": "fj", "fork_join": "fj",
                   "taskgraph": "task", "tasks": "task", "task-graph": "task"}
        return cls(aliases.get(str(value).lower(), str(value).lower()))


@dataclass(eq=False)
class TaskNode:
    kind: str  # "compute" | "halo" | "allreduce"
    label: str
    reads: list[Region] = field(default_factory=list)
    writes: list[Region] = field(default_factory=list)
    body: Callable | None = None
    group: str = ""
    relaxed: frozenset = frozenset()
    after: list["TaskNode"] = field(default_factory=list)
    # halo nodes
    halo_info: object = None
    halo_vector: object = None
    # allreduce nodes: local() -> values, store(result) -> None
    local: Callable | None = None
    store: Callable | None = None
    id: int = -1

    def __post_init__(self):
        if not self.group:
            self.group = self.label


def compute_task(label, body, reads=(), writes=(), *, group="", relaxed=(), after=()) -> TaskNode:
    return TaskNode("compute", label, list(reads), list(writes), body, group,
                    frozenset(relaxed), list(after))


def halo_task(label, info, x, buffer: str) -> TaskNode:
    """Exchange of ``x``'s boundary rows; reads the send rows, writes the tail."""
    reads = []
    for q in sorted(info.send_map):
        for start, length in _runs(info.send_map[q]):
            reads.append((buffer, start, length))
    writes = [(buffer, info.n_local, info.halo_size)] if info.halo_size else []
    return TaskNode("halo", label, reads, writes, halo_info=info, halo_vector=x)


def allreduce_task(label, local, store, reads=(), writes=()) -> TaskNode:
    return TaskNode("allreduce", label, list(reads), list(writes), local=local, store=store)


def _runs(indices):
    runs = []
    start = prev = None
    for i in map(int, indices):
        if start is None:
            start = prev = i
        elif i == prev + 1:
            prev = i
        else:
            runs.append((start, prev - start + 1))
            start = prev = i
    if start is not None:
        runs.append((start, prev - start + 1))
    return runs


def _overlap(a0, alen, b0, blen) -> bool:
    return a0 < b0 + blen and b0 < a0 + alen


class TaskGraph:
    """Nodes in submission order with their derived dependency edges."""

    def __init__(self, nodes: list[TaskNode]):
        self.nodes = list(nodes)
        for i, node in enumerate(self.nodes):
            node.id = i
        n = len(self.nodes)
        self.preds: list[set[int]] = [set() for _ in range(n)]
        history: dict[str, list[tuple[int, int, int, bool, bool]]] = {}
        for i, node in enumerate(self.nodes):
            accesses = [(r, False) for r in node.reads] + [(w, True) for w in node.writes]
            for (buf, off, length), is_write in accesses:
                if length <= 0:
                    continue
                relaxed = buf in node.relaxed
                for j, o, ln, w, rel in history.get(buf, ()):
                    if j == i or j in self.preds[i]:
                        continue
                    if (is_write or w) and not (relaxed and rel) and _overlap(off, length, o, ln):
                        self.preds[i].add(j)
            for (buf, off, length), is_write in accesses:
                if length > 0:
                    history.setdefault(buf, []).append((i, off, length, is_write, buf in node.relaxed))
            for other in node.after:
                if other.id < 0 or other.id >= n or self.nodes[other.id] is not other:
                    raise SchedulingError(f"{node.label}: 'after' refers to a node outside the graph")
                self.preds[i].add(other.id)
        self.succs: list[list[int]] = [[] for _ in range(n)]
        for i, ps in enumerate(self.preds):
            for p in ps:
                self.succs[p].append(i)
        self.order = self._topological_order()
        self.critical = self._feeds_collective()

    def _topological_order(self) -> list[int]:
        npred = [len(p) for p in self.preds]
        heap = [i for i, c in enumerate(npred) if c == 0]
        heapq.heapify(heap)
        order = []
        while heap:
            i = heapq.heappop(heap)
            order.append(i)
            for s in self.succs[i]:
                npred[s] -= 1
                if npred[s] == 0:
                    heapq.heappush(heap, s)
        if len(order) != len(self.nodes):
            stuck = [self.nodes[i].label for i, c in enumerate(npred) if c > 0]
            raise SchedulingError(f"dependency cycle among {sorted(set(stuck))}")
        return order

    def _feeds_collective(self) -> list[bool]:
        crit = [False] * len(self.nodes)
        for i in reversed(self.order):
            crit[i] = any(self.nodes[s].kind == "allreduce" or crit[s] for s in self.succs[i])
        return crit

    def __len__(self) -> int:
        return len(self.nodes)

    def compute_count(self) -> int:
        return sum(1 for n in self.nodes if n.kind == "compute")

    def conflicts(self, a: TaskNode, b: TaskNode) -> bool:
        for buf, off, length in a.writes:
            for other in (b.reads, b.writes):
                for buf2, off2, len2 in other:
                    if buf == buf2 and not (buf in a.relaxed and buf in b.relaxed) \
                            and _overlap(off, length, off2, len2):
                        return True
        for buf, off, length in b.writes:
            for buf2, off2, len2 in a.reads:
                if buf == buf2 and not (buf in a.relaxed and buf in b.relaxed) \
                        and _overlap(off, length, off2, len2):
                    return True
        return False


def _run_compute(node: TaskNode, ctx: RankContext, iteration: int) -> None:
    t0 = ctx.trace.now()
    node.body()
    ctx.trace.record(ctx.rank, ctx.worker_id(), "compute", node.label, iteration, t0, ctx.trace.now())


def _run_blocking_comm(node: TaskNode, ctx: RankContext, iteration: int) -> None:
    if node.kind == "halo":
        exchange_externals(ctx, node.halo_info, node.halo_vector, iteration % 2,
                           label=node.label, iteration=iteration).wait()
    else:
        node.store(allreduce_sum(ctx, node.local(), Mode.BLOCKING, label=node.label, iteration=iteration))


def _run_sequential(graph: TaskGraph, ctx: RankContext, iteration: int) -> None:
    for i in graph.order:
        node = graph.nodes[i]
        if node.kind == "compute":
            _run_compute(node, ctx, iteration)
        else:
            _run_blocking_comm(node, ctx, iteration)


def _run_fork_join(graph: TaskGraph, ctx: RankContext, iteration: int, debug: bool) -> None:
    order = graph.order
    pos = 0
    while pos < len(order):
        node = graph.nodes[order[pos]]
        if node.kind != "compute":
            _run_blocking_comm(node, ctx, iteration)
            pos += 1
            continue
        stage = []
        while pos < len(order):
            cand = graph.nodes[order[pos]]
            if cand.kind != "compute" or cand.group != node.group:
                break
            stage.append(order[pos])
            pos += 1
        in_stage = set(stage)
        wave_of: dict[int, int] = {}
        for i in stage:
            wave_of[i] = 1 + max((wave_of[p] for p in graph.preds[i] if p in in_stage), default=-1)
        waves: dict[int, list[int]] = {}
        for i in stage:
            waves.setdefault(wave_of[i], []).append(i)
        for w in sorted(waves):
            members = [graph.nodes[i] for i in waves[w]]
            if debug:
                _check_disjoint(graph, members)
            if len(members) == 1 or ctx.workers == 1:
                for m in members:
                    _run_compute(m, ctx, iteration)
            else:
                # implicit barrier: wait for the whole region
                list(ctx.executor.map(lambda m: _run_compute(m, ctx, iteration), members))


def _check_disjoint(graph: TaskGraph, members: list[TaskNode]) -> None:
    for a_idx, a in enumerate(members):
        for b in members[a_idx + 1:]:
            if graph.conflicts(a, b):
                raise ContractViolation(f"concurrent tasks {a.label}#{a.id} and {b.label}#{b.id} overlap")


def _run_task_graph(graph: TaskGraph, ctx: RankContext, iteration: int, debug: bool) -> None:
    nodes = graph.nodes
    n = len(nodes)
    npred = [len(p) for p in graph.preds]
    ready = [i for i in range(n) if npred[i] == 0]
    heapq.heapify(ready)
    unbegun = sum(1 for nd in nodes if nd.kind == "allreduce")
    inflight: dict[int, list] = {}  # node id -> [handle, compute tasks dispatched since begin]
    halos: dict[int, object] = {}
    running: dict[int, TaskNode] = {}
    completed = 0
    timeout = ctx.fabric.deadlock_timeout

    def complete(i):
        nonlocal completed
        completed += 1
        for s in graph.succs[i]:
            npred[s] -= 1
            if npred[s] == 0:
                heapq.heappush(ready, s)

    def handle_token(token):
        kind, payload = token
        if kind == "done":
            i, exc = payload
            running.pop(i, None)
            if exc is not None:
                raise exc
            complete(i)
        elif kind == "poison":
            ctx.fabric.check()

    def on_done(i):
        def cb(fut):
            ctx.wakeups.put(("done", (i, fut.exception())))
        return cb

    while completed < n:
        progress = False
        while True:
            try:
                handle_token(ctx.wakeups.get_nowait())
            except queue.Empty:
                break
        for i, h in list(halos.items()):
            if h.test():
                del halos[i]
                complete(i)
                progress = True

        deferred = []
        while ready:
            i = heapq.heappop(ready)
            node = nodes[i]
            if node.kind == "halo":
                h = exchange_externals(ctx, node.halo_info, node.halo_vector, iteration % 2,
                                       label=node.label, iteration=iteration)
                if h.test():
                    complete(i)
                else:
                    halos[i] = h
                progress = True
            elif node.kind == "allreduce":
                inflight[i] = [allreduce_sum(ctx, node.local(), Mode.OVERLAPPED, label=node.label,
                                             iteration=iteration), 0]
                unbegun -= 1
                progress = True
            else:
                hold = unbegun > 0 and not inflight and not graph.critical[i]
                if hold or len(running) >= ctx.workers:
                    deferred.append(i)
                    continue
                if debug:
                    for other in running.values():
                        if graph.conflicts(node, other):
                            raise ContractViolation(f"tasks {node.label}#{i} and {other.label}#{other.id} overlap")
                running[i] = node
                for entry in inflight.values():
                    entry[1] += 1
                ctx.executor.submit(_run_compute, node, ctx, iteration).add_done_callback(on_done(i))
                progress = True
        for i in deferred:
            heapq.heappush(ready, i)

        if not running and inflight:
            hold = unbegun > 0 and not inflight
            dispatchable = any(not hold or graph.critical[i] for i in ready)
            if not dispatchable:
                for i in sorted(inflight):
                    handle, dispatched = inflight[i]
                    if handle.test():
                        del inflight[i]
                        nodes[i].store(handle.finish(blocked=dispatched == 0))
                        complete(i)
                        progress = True
                        break
        if progress or completed == n:
            continue
        try:
            token = ctx.wakeups.get(timeout=timeout)
        except queue.Empty:
            err = ProtocolError(f"rank {ctx.rank}: task graph stalled for {timeout}s in iteration {iteration}")
            ctx.fabric.poison(err)
            raise err from None
        handle_token(token)


def run_graph(backend, graph: TaskGraph | list[TaskNode], ctx: RankContext | None = None, *,
              iteration: int = 0, debug: bool = False) -> TraceLog:
    """Execute ``graph`` on ``backend`` for one rank and return the (shared) trace."""
    backend = Backend.parse(backend)
    if not isinstance(graph, TaskGraph):
        graph = TaskGraph(graph)
    owned = ctx is None
    if owned:
        ctx = standalone_context()
    try:
        if backend is Backend.SEQUENTIAL:
            _run_sequential(graph, ctx, iteration)
        elif backend is Backend.FORK_JOIN:
            _run_fork_join(graph, ctx, iteration, debug)
        else:
            _run_task_graph(graph, ctx, iteration, debug)
    finally:
        if owned:
            ctx.close()
    return ctx.trace
