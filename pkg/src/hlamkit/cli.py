"""``hlamkit`` command line: gen, solve, bench, verify.

Exit codes: 0 success, 1 not converged or true-residual check failed,
2 usage error, 3 barrier-table mismatch, 4 fabric, protocol or numerical
breakdown error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .bench import BenchSpec, run_bench, summarize, write_csv
from .errors import HlamError
from .problem import GridSpec, Stencil, average_nnz_per_row, generate, write_matrix_market
from .runtime import Backend, Fabric
from .solvers import Method, SolverConfig, solve

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_BARRIERS, EXIT_ERROR = 0, 1, 2, 3, 4

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _str_list(text: str) -> list[str]:
    return [v for v in text.replace(",", " ").split() if v]


def _grid_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--grid", default="8x8x8", help="NXxNYxNZ (default 8x8x8)")
    p.add_argument("--stencil", type=int, choices=(7, 27), default=7)


def _exec_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--workers", type=int, help="worker threads per rank (default: CPU count, capped by HLAMKIT_WORKERS)")
    p.add_argument("--tasks", type=int, dest="task_count", help="tasks per rank (default 4 x workers)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hlamkit", description=__doc__.splitlines()[0])
    parser.add_argument("--config", type=Path, help="TOML file with defaults ([solve], [bench], ... sections)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a stencil system and print its statistics")
    _grid_args(p)
    p.add_argument("--out", type=Path, help="write the matrix in Matrix Market format")
    p.add_argument("--ranks", type=int, default=1)
    p.add_argument("--dump-plan", type=Path, help="write the rank plan as JSON ('-' for stdout)")

    p = sub.add_parser("solve", help="run one solve and check the result")
    _grid_args(p)
    _exec_args(p)
    p.add_argument("--method", choices=[m.value for m in Method], default="cg")
    p.add_argument("--backend", choices=[b.value for b in Backend], default="seq")
    p.add_argument("--ranks", type=int, default=1)
    p.add_argument("--epsilon", type=float, default=1e-6)
    p.add_argument("--restart-epsilon", type=float, default=1e-5)
    p.add_argument("--max-iterations", type=int, default=5000)
    p.add_argument("--simd", type=int, default=8, dest="simd_width")
    p.add_argument("--relative", action="store_true", help="scale epsilon by the initial residual")
    p.add_argument("--deadlock-timeout", type=float, default=30.0)
    p.add_argument("--debug", action="store_true", help="enable conflict and isolation assertions")
    p.add_argument("--trace", type=Path, help="write the event trace as JSON lines")
    p.add_argument("--report", type=Path, help="write the report JSON here instead of stdout")
    p.add_argument("--residual-csv", type=Path)
    p.add_argument("--dump-plan", type=Path, help="write the rank plan as JSON ('-' for stdout)")
    p.add_argument("--verify-barriers", action="store_true",
                   help="fail with exit 3 unless every iteration matches the expected barrier counts")

    p = sub.add_parser("bench", help="weak or strong scaling sweep")
    _grid_args(p)
    _exec_args(p)
    p.add_argument("--mode", choices=("weak", "strong"), default="weak")
    p.add_argument("--ranks", type=_int_list, default=[1, 2, 4])
    p.add_argument("--backends", type=_str_list, default=["seq", "task"])
    p.add_argument("--methods", type=_str_list, default=["cg", "cg-nb"])
    p.add_argument("--reps", type=int, default=10, dest="repetitions")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epsilon", type=float, default=1e-6)
    p.add_argument("--csv", type=Path, default=Path("bench.csv"))
    p.add_argument("--json", type=Path, default=Path("bench.json"))

    p = sub.add_parser("verify", help="run the acceptance checks")
    p.add_argument("--only", type=_str_list, action="extend", help="comma-separated check names")
    p.add_argument("--workers", type=int, default=4)
    p.add_argument("-v", "--verbose", action="store_true")
    return parser


def _load_config(argv) -> dict:
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config", type=Path)
    known, _ = pre.parse_known_args(argv)
    if known.config is None:
        return {}
    with open(known.config, "rb") as fh:
        return tomllib.load(fh)


def _apply_config(parser: argparse.ArgumentParser, config: dict) -> None:
    """Section ``[name]`` (or top-level keys) become that subcommand's defaults."""
    subparsers = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    shared = {k: v for k, v in config.items() if not isinstance(v, dict)}
    for name, sp in subparsers.choices.items():
        values = {**shared, **config.get(name, {})}
        dests = {a.dest for a in sp._actions}
        clean = {}
        for key, value in values.items():
            dest = key.replace("-", "_")
            dest = {"tasks": "task_count", "simd": "simd_width", "reps": "repetitions"}.get(dest, dest)
            if dest in dests:
                clean[dest] = value
        sp.set_defaults(**clean)


def _write_plan(target: Path, text: str) -> None:
    if str(target) == "-":
        print(text)
    else:
        target.write_text(text)


def cmd_gen(args) -> int:
    grid = GridSpec.parse(args.grid, Stencil.parse(args.stencil))
    system = generate(grid)
    info = {"grid": str(grid), "rows": system.nrows, "nnz": system.matrix.nnz,
            "avg_nnz_per_row": average_nnz_per_row(system.matrix)}
    if args.out:
        write_matrix_market(system.matrix, args.out)
        info["matrix_market"] = str(args.out)
    if args.dump_plan:
        from .decomposition import plan_ranks

        _write_plan(args.dump_plan, plan_ranks(grid, args.ranks, system.matrix).to_json(indent=2))
    print(json.dumps(info))
    return EXIT_OK


def cmd_solve(args) -> int:
    from .verify import expected_barriers

    grid = GridSpec.parse(args.grid, Stencil.parse(args.stencil))
    system = generate(grid)
    if args.dump_plan:
        from .decomposition import plan_ranks

        _write_plan(args.dump_plan, plan_ranks(grid, args.ranks, system.matrix).to_json(indent=2))
    cfg = SolverConfig(method=Method(args.method), epsilon=args.epsilon, restart_epsilon=args.restart_epsilon,
                       max_iterations=args.max_iterations, task_count=args.task_count,
                       simd_width=args.simd_width, workers=args.workers, relative=args.relative,
                       debug=args.debug)
    fabric = Fabric(args.ranks, deadlock_timeout=args.deadlock_timeout, debug=args.debug)
    report = solve(system, cfg, backend=args.backend, fabric=fabric)
    if args.trace:
        report.trace.to_jsonl(args.trace)
    if args.residual_csv:
        report.write_residual_csv(args.residual_csv)
    if args.report:
        report.to_json(args.report, indent=2)
    else:
        print(report.to_json())
    status = EXIT_OK
    ok = report.converged and report.true_residual < 10 * cfg.epsilon
    print(f"{cfg.method.value} on {report.backend} x{report.ranks}: converged={report.converged} "
          f"iterations={report.iterations} true_residual={report.true_residual:.3e} "
          f"barriers={report.barrier_profile()}", file=sys.stderr)
    if not ok:
        status = EXIT_FAIL
    if args.verify_barriers:
        want = expected_barriers(cfg.method, report.backend)
        got = set(report.barriers.values())
        if want is None:
            print(f"no barrier expectation for {cfg.method.value}", file=sys.stderr)
            return EXIT_USAGE
        if got != {want}:
            print(f"barrier mismatch: want {want} per iteration, got {sorted(got)}", file=sys.stderr)
            return EXIT_BARRIERS
    return status


def cmd_bench(args) -> int:
    base = GridSpec.parse(args.grid, Stencil.parse(args.stencil))
    spec = BenchSpec(args.mode, base, ranks=tuple(args.ranks), backends=tuple(args.backends),
                     methods=tuple(args.methods), repetitions=args.repetitions, seed=args.seed,
                     epsilon=args.epsilon, workers=args.workers, task_count=args.task_count)

    def progress(s):
        print(f"{s.method} {s.backend} ranks={s.ranks} rep={s.rep}: {s.seconds:.4f}s "
              f"({s.iterations} iterations)", file=sys.stderr)

    samples = run_bench(spec, progress)
    table = summarize(samples, spec)
    write_csv(samples, args.csv)
    table.to_json(args.json)
    print(table.format())
    return EXIT_OK if all(c.valid for c in table.cells) else EXIT_FAIL


def cmd_verify(args) -> int:
    from .verify import run_checks

    results = run_checks(args.only, workers=args.workers, verbose=args.verbose)
    failed = [r.name for r in results if not r.passed]
    total = sum(r.seconds for r in results)
    if failed:
        print(f"FAILED: {', '.join(failed)} ({total:.1f}s)")
        return EXIT_FAIL
    print(f"all {len(results)} checks passed ({total:.1f}s)")
    return EXIT_OK


COMMANDS = {"gen": cmd_gen, "solve": cmd_solve, "bench": cmd_bench, "verify": cmd_verify}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        _apply_config(parser, _load_config(argv))
    except (OSError, tomllib.TOMLDecodeError) as exc:
        print(f"hlamkit: cannot read config: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        return COMMANDS[args.command](args)
    except HlamError as exc:
        print(f"hlamkit: {type(exc).__name__}: {exc}", file=sys.stderr)
        if isinstance(exc, ValueError):
            return EXIT_USAGE
        return EXIT_ERROR
    except ValueError as exc:
        print(f"hlamkit: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
