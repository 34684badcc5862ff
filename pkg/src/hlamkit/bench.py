"""Weak and strong scaling sweeps with repetition statistics.

Raw samples go to a CSV with the fixed columns ``method, backend, ranks,
rep, seconds, iterations``; a failed repetition is kept with
``seconds = nan`` and ``iterations = -1`` so the sweep never aborts.
Summaries use lower medians and lower-interpolated quartiles, so every
reported statistic is an observed sample.
"""

from __future__ import annotations

import csv
import enum
import json
import math
import random
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .problem import GridSpec, Stencil, generate
from .runtime import Backend, Fabric
from .solvers import Method, SolverConfig, solve

CSV_COLUMNS = ["method", "backend", "ranks", "rep", "seconds", "iterations"]


class ScalingMode(enum.Enum):
    WEAK = "weak"
    STRONG = "strong"


@dataclass(frozen=True)
class BenchSpec:
    mode: ScalingMode
    base: GridSpec
    ranks: tuple[int, ...] = (1, 2, 4)
    backends: tuple[str, ...] = ("seq", "task")
    methods: tuple[str, ...] = ("cg", "cg-nb")
    repetitions: int = 10
    seed: int = 0
    epsilon: float = 1e-6
    workers: int | None = None
    task_count: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "mode", ScalingMode(getattr(self.mode, "value", self.mode)))
        object.__setattr__(self, "ranks", tuple(sorted(set(int(r) for r in self.ranks))))
        object.__setattr__(self, "backends", tuple(Backend.parse(b).value for b in self.backends))
        object.__setattr__(self, "methods", tuple(Method(getattr(m, "value", m)).value for m in self.methods))
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        if not self.ranks or self.ranks[0] < 1:
            raise ValueError("rank counts must be >= 1")
        if self.mode is ScalingMode.STRONG and self.ranks[-1] > self.base.nz:
            raise ValueError(f"{self.ranks[-1]} ranks exceed the {self.base.nz} z-planes of the grid")

    def grid_for(self, ranks: int) -> GridSpec:
        """Weak mode stacks one base grid per rank along z."""
        return self.base.with_nz(self.base.nz * ranks) if self.mode is ScalingMode.WEAK else self.base

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mode"] = self.mode.value
        d["base"] = f"{self.base.nx}x{self.base.ny}x{self.base.nz}"
        d["stencil"] = int(self.base.stencil)
        d["ranks"] = list(self.ranks)
        d["backends"] = list(self.backends)
        d["methods"] = list(self.methods)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "BenchSpec":
        d = dict(d)
        base = GridSpec.parse(d.pop("base"), Stencil.parse(d.pop("stencil", 7)))
        return cls(base=base, **{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


@dataclass
class Sample:
    method: str
    backend: str
    ranks: int
    rep: int
    seconds: float
    iterations: int

    @property
    def ok(self) -> bool:
        return self.iterations >= 0 and math.isfinite(self.seconds)


@dataclass
class Cell:
    method: str
    backend: str
    ranks: int
    rows_per_rank: float
    samples: int
    valid: bool
    median: float
    q1: float
    q3: float
    min: float
    max: float
    iterations: list[int] = field(default_factory=list)
    efficiency: float = float("nan")

    @property
    def key(self) -> tuple[str, str, int]:
        return self.method, self.backend, self.ranks


@dataclass
class EfficiencyTable:
    mode: str
    cells: list[Cell]
    references: dict[str, tuple[str, str, int]]

    def cell(self, method: str, backend: str, ranks: int) -> Cell:
        for c in self.cells:
            if c.key == (method, Backend.parse(backend).value, ranks):
                return c
        raise KeyError((method, backend, ranks))

    def to_dict(self) -> dict:
        return {"mode": self.mode,
                "references": {m: list(k) for m, k in self.references.items()},
                "cells": [asdict(c) for c in self.cells]}

    def to_json(self, path: str | Path | None = None) -> str:
        text = json.dumps(self.to_dict(), indent=2, allow_nan=True)
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_dict(cls, d: dict) -> "EfficiencyTable":
        return cls(d["mode"], [Cell(**c) for c in d["cells"]],
                   {m: (k[0], k[1], int(k[2])) for m, k in d["references"].items()})

    @classmethod
    def from_json(cls, text_or_path) -> "EfficiencyTable":
        text = str(text_or_path)
        if not text.lstrip().startswith("{"):
            text = Path(text).read_text()
        return cls.from_dict(json.loads(text))

    def __eq__(self, other) -> bool:
        if not isinstance(other, EfficiencyTable):
            return NotImplemented
        return json.dumps(self.to_dict(), sort_keys=True) == json.dumps(other.to_dict(), sort_keys=True)

    def format(self) -> str:
        lines = [f"{'method':<12} {'backend':<7} {'ranks':>5} {'median[s]':>10} {'q1':>9} {'q3':>9} "
                 f"{'iters':>6} {'eff':>6}"]
        for c in self.cells:
            its = "/".join(str(i) for i in sorted(set(c.iterations))) or "-"
            med = f"{c.median:10.4f}" if c.valid else f"{'invalid':>10}"
            lines.append(f"{c.method:<12} {c.backend:<7} {c.ranks:>5} {med} {c.q1:9.4f} {c.q3:9.4f} "
                         f"{its:>6} {c.efficiency:6.3f}")
        return "\n".join(lines)


def lower_stats(values) -> tuple[float, float, float, float, float]:
    """``(median, q1, q3, min, max)`` using the lower sample for ties."""
    if len(values) == 0:
        nan = float("nan")
        return nan, nan, nan, nan, nan
    v = np.asarray(values, dtype=float)
    q1, med, q3 = np.percentile(v, [25, 50, 75], method="lower")
    return float(med), float(q1), float(q3), float(v.min()), float(v.max())


def run_bench(spec: BenchSpec, progress=None) -> list[Sample]:
    """Run every (method, backend, ranks, rep) once; the run order is shuffled by ``spec.seed``."""
    systems = {r: generate(spec.grid_for(r)) for r in spec.ranks}
    jobs = [(m, b, r, k) for m in spec.methods for b in spec.backends for r in spec.ranks
            for k in range(spec.repetitions)]
    random.Random(spec.seed).shuffle(jobs)
    samples = []
    for m, b, r, k in jobs:
        cfg = SolverConfig(method=Method(m), epsilon=spec.epsilon, workers=spec.workers,
                           task_count=spec.task_count, instrument=False)
        try:
            rep = solve(systems[r], cfg, backend=b, fabric=Fabric(r))
            ok = rep.converged and rep.true_residual < 10 * spec.epsilon
            sample = Sample(m, b, r, k, rep.wall_time if ok else float("nan"), rep.iterations if ok else -1)
        except Exception:  # noqa: BLE001 - a failed cell must not abort the sweep
            sample = Sample(m, b, r, k, float("nan"), -1)
        samples.append(sample)
        if progress is not None:
            progress(sample)
    samples.sort(key=lambda s: (spec.methods.index(s.method), spec.backends.index(s.backend), s.ranks, s.rep))
    return samples


def summarize(samples: list[Sample], spec: BenchSpec) -> EfficiencyTable:
    groups: dict[tuple[str, str, int], list[Sample]] = {}
    for s in samples:
        groups.setdefault((s.method, s.backend, s.ranks), []).append(s)
    cells = []
    for (m, b, r), group in groups.items():
        good = [s for s in group if s.ok]
        med, q1, q3, lo, hi = lower_stats([s.seconds for s in good])
        grid = spec.grid_for(r)
        cells.append(Cell(m, b, r, grid.nrows / r, len(group), len(good) == len(group), med, q1, q3, lo, hi,
                          [s.iterations for s in group]))
    refs = {}
    ref_backend = "seq" if "seq" in spec.backends else spec.backends[0]
    for m in spec.methods:
        classical = Method(m).classical.value
        ref_method = classical if classical in spec.methods else m
        refs[m] = (ref_method, ref_backend, spec.ranks[0])
    index = {c.key: c for c in cells}
    for c in cells:
        ref = index.get(refs[c.method])
        if ref is None or not ref.valid or not c.valid:
            continue
        if c.key == ref.key:
            c.efficiency = 1.0
        elif spec.mode is ScalingMode.WEAK:
            c.efficiency = ref.median / c.median
        else:
            c.efficiency = ref.median * ref.ranks / (c.median * c.ranks)
    return EfficiencyTable(spec.mode.value, cells, refs)


def write_csv(samples: list[Sample], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for s in samples:
            w.writerow([s.method, s.backend, s.ranks, s.rep, repr(float(s.seconds)), s.iterations])


def read_csv(path: str | Path) -> list[Sample]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != CSV_COLUMNS:
            raise ValueError(f"unexpected CSV columns {reader.fieldnames}, want {CSV_COLUMNS}")
        return [Sample(row["method"], row["backend"], int(row["ranks"]), int(row["rep"]),
                       float(row["seconds"]), int(row["iterations"])) for row in reader]
