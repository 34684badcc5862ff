"""Per-rank event log used to count blocking and overlapped collectives."""

from __future__ import annotations

import json
import threading
import time
from collections import defaultdict
from dataclasses import asdict, dataclass
from pathlib import Path

EVENT_KINDS = (
    "compute",
    "p2p_send",
    "p2p_recv",
    "collective_begin",
    "collective_end",
    "blocking_wait",
)


@dataclass
class Event:
    rank: int
    worker: int
    kind: str
    label: str
    iter: int
    t_start_ns: int
    t_end_ns: int
    op: str = ""  # collective or p2p operation id, empty for compute
    channel: str = ""

    def to_dict(self) -> dict:
        d = asdict(self)
        if not d["op"]:
            del d["op"]
        if not d["channel"]:
            del d["channel"]
        return d


class TraceLog:
    """Ordered events per rank. Appends are thread-safe; order is append order."""

    def __init__(self, epoch_ns: int | None = None):
        self.epoch_ns = time.perf_counter_ns() if epoch_ns is None else epoch_ns
        self._events: dict[int, list[Event]] = defaultdict(list)
        self._lock = threading.Lock()

    def now(self) -> int:
        return time.perf_counter_ns() - self.epoch_ns

    def record(self, rank, worker, kind, label, iteration, t_start, t_end=None, op="", channel=""):
        if kind not in EVENT_KINDS:
            raise ValueError(f"unknown event kind {kind!r}")
        ev = Event(rank, worker, kind, label, iteration, t_start,
                   t_start if t_end is None else t_end, op, channel)
        with self._lock:
            self._events[rank].append(ev)
        return ev

    def extend(self, other: "TraceLog") -> None:
        for rank in other.ranks():
            with self._lock:
                self._events[rank].extend(other.events(rank))

    def ranks(self) -> list[int]:
        return sorted(self._events)

    def events(self, rank: int | None = None) -> list[Event]:
        if rank is not None:
            return list(self._events.get(rank, ()))
        return [e for r in self.ranks() for e in self._events[r]]

    def iterations(self) -> list[int]:
        return sorted({e.iter for e in self.events()})

    def __len__(self) -> int:
        return sum(len(v) for v in self._events.values())

    def to_jsonl(self, path: str | Path | None = None) -> str:
        text = "".join(json.dumps(e.to_dict()) + "\n" for e in self.events())
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_jsonl(cls, text: str) -> "TraceLog":
        log = cls(epoch_ns=0)
        for line in text.splitlines():
            if line.strip():
                d = json.loads(line)
                log._events[d["rank"]].append(Event(**d))
        return log


def collective_ops(trace: TraceLog, iteration: int) -> list[str]:
    ops = []
    for e in trace.events():
        if e.kind == "collective_begin" and e.iter == iteration and e.op not in ops:
            ops.append(e.op)
    return ops


def count_barriers(trace: TraceLog, iteration: int) -> tuple[int, int]:
    """``(blocking, overlapped)`` collectives in one iteration.

    A collective is blocking when any rank logged a ``blocking_wait`` for it.
    """
    ops = collective_ops(trace, iteration)
    waited = {e.op for e in trace.events() if e.kind == "blocking_wait" and e.iter == iteration}
    blocking = sum(1 for op in ops if op in waited)
    return blocking, len(ops) - blocking
