"""In-process message fabric: isolated ranks, parity-indexed channels, allreduce.

Each simulated rank runs on its own thread and owns its buffers; data moves
between ranks only as copied channel payloads. The interface is deliberately
narrow (send, receive, allreduce) so a real transport could stand in.
"""

from __future__ import annotations

import enum
import os
import queue
import threading
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from ..errors import FabricError, ProtocolError
from .trace import TraceLog

DEFAULT_DEADLOCK_TIMEOUT = 30.0
_POLL = 0.05


class Mode(enum.Enum):
    BLOCKING = "blocking"
    OVERLAPPED = "overlapped"


def default_workers() -> int:
    """``os.cpu_count()``, capped by ``HLAMKIT_WORKERS`` when set."""
    n = os.cpu_count() or 1
    cap = os.environ.get("HLAMKIT_WORKERS")
    if cap:
        n = min(n, max(1, int(cap)))
    return n


def cap_workers(requested: int) -> int:
    cap = os.environ.get("HLAMKIT_WORKERS")
    if cap:
        return max(1, min(requested, int(cap)))
    return max(1, requested)


class _Collective:
    def __init__(self, size: int):
        self.size = size
        self.parts: dict[int, np.ndarray] = {}
        self.done = threading.Event()
        self.result: np.ndarray | None = None


class Fabric:
    """Channels and collectives shared by ``size`` simulated ranks."""

    def __init__(self, size: int = 1, *, deadlock_timeout: float = DEFAULT_DEADLOCK_TIMEOUT,
                 debug: bool = False):
        if size < 1:
            raise ValueError("fabric needs at least one rank")
        self.size = size
        self.deadlock_timeout = deadlock_timeout
        self.debug = debug
        self.trace = TraceLog()
        self._lock = threading.Lock()
        self._channels: dict[tuple[int, int, int], queue.SimpleQueue] = {}
        self._collectives: dict[tuple[int, Mode], _Collective] = {}
        self._wakeups = [queue.SimpleQueue() for _ in range(size)]
        self._buffers: dict[int, list[np.ndarray]] = {r: [] for r in range(size)}
        self._poison: BaseException | None = None

    # -- failure handling --------------------------------------------------

    def poison(self, exc: BaseException) -> None:
        with self._lock:
            if self._poison is None:
                self._poison = exc
        for q in self._wakeups:
            q.put(("poison", None))

    def check(self) -> None:
        if self._poison is not None:
            raise FabricError(f"fabric poisoned: {self._poison}") from self._poison

    def wake(self, rank: int, token=("wake", None)) -> None:
        self._wakeups[rank].put(token)

    def wakeup_queue(self, rank: int) -> queue.SimpleQueue:
        return self._wakeups[rank]

    # -- point to point ----------------------------------------------------

    def _channel(self, src: int, dst: int, parity: int) -> queue.SimpleQueue:
        key = (src, dst, parity)
        with self._lock:
            ch = self._channels.get(key)
            if ch is None:
                ch = self._channels[key] = queue.SimpleQueue()
        return ch

    def send(self, src: int, dst: int, parity: int, payload: np.ndarray) -> None:
        self.check()
        data = np.array(payload, copy=True)
        self._channel(src, dst, parity).put(data)
        self.wake(dst)

    def try_recv(self, src: int, dst: int, parity: int) -> np.ndarray | None:
        self.check()
        try:
            data = self._channel(src, dst, parity).get_nowait()
        except queue.Empty:
            return None
        if self.debug:
            for buf in self._buffers[src]:
                if np.shares_memory(data, buf):
                    raise FabricError(f"rank {dst} received a view of rank {src}'s buffer")
        return data

    def register_buffers(self, rank: int, *arrays: np.ndarray) -> None:
        """Record a rank's private buffers for the debug isolation check."""
        if self.debug:
            self._buffers[rank].extend(arrays)

    # -- collectives -------------------------------------------------------

    def contribute(self, rank: int, seq: int, mode: Mode, values: np.ndarray) -> _Collective:
        self.check()
        key = (seq, mode)
        with self._lock:
            coll = self._collectives.get(key)
            if coll is None:
                coll = self._collectives[key] = _Collective(self.size)
            if rank in coll.parts:
                raise ProtocolError(f"rank {rank} contributed twice to collective {seq}")
            coll.parts[rank] = np.array(values, dtype=np.float64, copy=True)
            complete = len(coll.parts) == self.size
            if complete:
                del self._collectives[key]
        if complete:
            total = coll.parts[0].copy()
            for r in range(1, self.size):
                total = total + coll.parts[r]
            coll.result = total
            coll.done.set()
            for r in range(self.size):
                self.wake(r)
        return coll

    def wait_collective(self, coll: _Collective, rank: int, what: str) -> np.ndarray:
        deadline = time.monotonic() + self.deadlock_timeout
        while not coll.done.wait(_POLL):
            self.check()
            if time.monotonic() > deadline:
                err = ProtocolError(
                    f"rank {rank}: {what} did not complete within {self.deadlock_timeout}s "
                    "(mismatched collective calls?)")
                self.poison(err)
                raise err
        return coll.result

    # -- launching ---------------------------------------------------------

    def run(self, fn, *, workers: int = 1) -> list:
        """Run ``fn(ctx)`` on every rank in its own thread and return the results."""
        results: list = [None] * self.size
        errors: list[BaseException | None] = [None] * self.size

        def body(rank):
            ctx = RankContext(self, rank, workers=workers)
            try:
                results[rank] = fn(ctx)
            except BaseException as exc:  # noqa: BLE001 - re-raised below
                errors[rank] = exc
                self.poison(exc)
            finally:
                ctx.close()

        if self.size == 1:
            body(0)
        else:
            threads = [threading.Thread(target=body, args=(r,), name=f"rank{r}") for r in range(self.size)]
            for t in threads:
                t.start()
            for t in threads:
                t.join()
        primary = [e for e in errors if e is not None and not _is_secondary(e)]
        if primary:
            raise primary[0]
        for e in errors:
            if e is not None:
                raise e
        return results


def _is_secondary(exc: BaseException) -> bool:
    return type(exc) is FabricError and "poisoned" in str(exc)


class RankContext:
    """One rank's view of the fabric plus its worker pool and sequence counters."""

    def __init__(self, fabric: Fabric, rank: int, workers: int = 1):
        self.fabric = fabric
        self.rank = rank
        self.workers = max(1, workers)
        self.trace = fabric.trace
        self.wakeups = fabric.wakeup_queue(rank)
        self._coll_seq = 0
        self._p2p_seq = 0
        self._executor: ThreadPoolExecutor | None = None

    @property
    def size(self) -> int:
        return self.fabric.size

    @property
    def executor(self) -> ThreadPoolExecutor:
        if self._executor is None:
            self._executor = ThreadPoolExecutor(self.workers, thread_name_prefix=f"r{self.rank}w")
        return self._executor

    def close(self) -> None:
        if self._executor is not None:
            self._executor.shutdown(wait=True)
            self._executor = None

    def next_collective(self, label: str) -> tuple[int, str]:
        seq = self._coll_seq
        self._coll_seq += 1
        return seq, f"c{seq}:{label}"

    def next_p2p(self, label: str) -> str:
        seq = self._p2p_seq
        self._p2p_seq += 1
        return f"x{seq}:{label}"

    def worker_id(self) -> int:
        name = threading.current_thread().name
        if name.startswith(f"r{self.rank}w_"):
            return int(name.rsplit("_", 1)[1]) + 1
        return 0


def standalone_context(workers: int = 1) -> RankContext:
    return RankContext(Fabric(1), 0, workers=workers)


class CollectiveHandle:
    """Completion handle of an overlapped allreduce."""

    def __init__(self, ctx: RankContext, coll: _Collective, op: str, label: str, iteration: int,
                 t_begin: int):
        self.ctx = ctx
        self._coll = coll
        self.op = op
        self.label = label
        self.iteration = iteration
        self.t_begin = t_begin
        self.finished = False

    def test(self) -> bool:
        self.ctx.fabric.check()
        return self._coll.done.is_set()

    def finish(self, blocked: bool, t_idle: int | None = None):
        """Consume the result and log ``collective_end`` (and ``blocking_wait`` if ``blocked``)."""
        ctx = self.ctx
        result = ctx.fabric.wait_collective(self._coll, ctx.rank, self.op)
        now = ctx.trace.now()
        if blocked:
            ctx.trace.record(ctx.rank, 0, "blocking_wait", self.label, self.iteration,
                             self.t_begin if t_idle is None else t_idle, now, op=self.op)
        ctx.trace.record(ctx.rank, 0, "collective_end", self.label, self.iteration, now, op=self.op)
        self.finished = True
        return _unwrap(result)

    def wait(self):
        return self.finish(blocked=not self.test())


def _unwrap(result: np.ndarray):
    return float(result[0]) if result.size == 1 else result.copy()


def allreduce_sum(ctx: RankContext, value, mode: Mode = Mode.BLOCKING, *, label: str = "allreduce",
                  iteration: int = 0):
    """Sum ``value`` (scalar or small array) over all ranks in ascending rank order.

    ``BLOCKING`` returns the sum and logs a ``blocking_wait``. ``OVERLAPPED``
    returns a :class:`CollectiveHandle` whose completion the caller schedules.
    """
    mode = Mode(mode)
    seq, op = ctx.next_collective(label)
    t0 = ctx.trace.now()
    ctx.trace.record(ctx.rank, ctx.worker_id(), "collective_begin", label, iteration, t0, op=op)
    coll = ctx.fabric.contribute(ctx.rank, seq, mode, np.atleast_1d(np.asarray(value, dtype=np.float64)))
    handle = CollectiveHandle(ctx, coll, op, label, iteration, t0)
    if mode is Mode.OVERLAPPED:
        return handle
    return handle.finish(blocked=True)


class HaloHandle:
    """Pending halo receives; completing it copies payloads into the tail of ``x``."""

    def __init__(self, ctx: RankContext, info, x: np.ndarray, parity: int, op: str, label: str,
                 iteration: int):
        self.ctx = ctx
        self.info = info
        self.x = x
        self.parity = parity
        self.op = op
        self.label = label
        self.iteration = iteration
        self.pending = set(info.recv_map)

    def test(self) -> bool:
        ctx = self.ctx
        for q in sorted(self.pending):
            data = ctx.fabric.try_recv(q, ctx.rank, self.parity)
            if data is None:
                continue
            count, offset = self.info.recv_map[q]
            if data.size != count:
                raise ProtocolError(f"rank {ctx.rank}: expected {count} halo values from {q}, got {data.size}")
            self.x[offset:offset + count] = data
            self.pending.discard(q)
            ctx.trace.record(ctx.rank, ctx.worker_id(), "p2p_recv", self.label, self.iteration,
                             ctx.trace.now(), op=self.op, channel=f"{q}->{ctx.rank}/p{self.parity}")
        return not self.pending

    def wait(self) -> None:
        if self.test():
            return
        ctx = self.ctx
        t0 = ctx.trace.now()
        deadline = time.monotonic() + ctx.fabric.deadlock_timeout
        while not self.test():
            try:
                token = ctx.wakeups.get(timeout=_POLL)
            except queue.Empty:
                token = None
            ctx.fabric.check()
            if token is None and time.monotonic() > deadline:
                err = ProtocolError(f"rank {ctx.rank}: halo {self.op} never arrived")
                ctx.fabric.poison(err)
                raise err
        ctx.trace.record(ctx.rank, ctx.worker_id(), "blocking_wait", self.label, self.iteration,
                         t0, ctx.trace.now(), op=self.op)

    @property
    def done(self) -> bool:
        return not self.pending


def exchange_externals(ctx: RankContext, info, x: np.ndarray, parity: int, *, label: str = "halo",
                       iteration: int = 0) -> HaloHandle:
    """Send boundary rows to every neighbour and post receives into the tail of ``x``.

    The channel set is chosen by ``parity`` so consecutive iterations never
    share channels. With one rank the returned handle is already complete.
    """
    n_ext = info.n_local + info.halo_size
    if len(x) < n_ext:
        raise ValueError(f"x has {len(x)} entries, needs {n_ext} (local + halo)")
    op = ctx.next_p2p(label) if info.recv_map or info.send_map else ""
    for q in sorted(info.send_map):
        staging = x[info.send_map[q]]  # fancy indexing gathers into a fresh buffer
        ctx.fabric.send(ctx.rank, q, parity, staging)
        ctx.trace.record(ctx.rank, ctx.worker_id(), "p2p_send", label, iteration, ctx.trace.now(),
                         op=op, channel=f"{ctx.rank}->{q}/p{parity}")
    return HaloHandle(ctx, info, x, parity, op, label, iteration)
