"""A small weak-scaling sweep written to CSV and JSON.

Each rank keeps an 8x8x8 slab, so the global grid grows along z with the
rank count. Times are medians over three repetitions; efficiencies are
relative to classical CG on the sequential backend with one rank.

    python3 demos/weak_scaling.py [outdir]
"""

import sys
from pathlib import Path

from hlamkit import GridSpec
from hlamkit.bench import BenchSpec, run_bench, summarize, write_csv

out = Path(sys.argv[1] if len(sys.argv) > 1 else ".")
out.mkdir(parents=True, exist_ok=True)

spec = BenchSpec("weak", GridSpec(8, 8, 8), ranks=(1, 2, 4), backends=("seq", "task"),
                 methods=("cg", "cg-nb"), repetitions=3, workers=2)
samples = run_bench(spec, progress=lambda s: print(".", end="", flush=True))
print()
table = summarize(samples, spec)
write_csv(samples, out / "weak.csv")
table.to_json(out / "weak.json")
print(table.format())
print(f"\nwrote {out / 'weak.csv'} and {out / 'weak.json'}")
print("Simulated ranks share one process, so absolute efficiencies mostly reflect Python overheads.")
