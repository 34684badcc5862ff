import json
import subprocess
import sys

import pytest

from hlamkit.bench import CSV_COLUMNS
from hlamkit.cli import main
from hlamkit.runtime import TraceLog


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_cg_nb_barriers_on_two_ranks(capsys):
    code, out, err = run(capsys, "solve", "--method", "cg-nb", "--grid", "8x8x8", "--stencil", "7",
                         "--backend", "task", "--ranks", "2", "--verify-barriers")
    assert code == 0
    report = json.loads(out)
    assert report["converged"] and report["barrier_profile"] == [0, 2]
    assert "cg-nb" in err


def test_jacobi_single_cell(capsys):
    code, out, _ = run(capsys, "solve", "--method", "jacobi", "--grid", "1x1x1", "--stencil", "7")
    assert code == 0
    assert json.loads(out)["iterations"] == 1


def test_unknown_method_is_usage_error(capsys):
    code, _, err = run(capsys, "solve", "--method", "gmres")
    assert code == 2
    assert "invalid choice" in err


@pytest.mark.parametrize("argv", [["solve", "--grid", "8x8"], ["solve", "--ranks", "99"], ["frobnicate"]])
def test_bad_arguments_are_usage_errors(capsys, argv):
    assert run(capsys, *argv)[0] == 2


def test_nonconvergence_exit_code(capsys):
    code, out, _ = run(capsys, "solve", "--max-iterations", "2")
    assert code == 1
    assert json.loads(out)["converged"] is False


def test_barrier_mismatch_exit_code(capsys, monkeypatch):
    import hlamkit.verify as verify

    monkeypatch.setitem(verify.BARRIER_TABLE, (verify.Method.CG, "seq"), (1, 1))
    code, _, err = run(capsys, "solve", "--grid", "4x4x4", "--verify-barriers")
    assert code == 3 and "barrier mismatch" in err


def test_breakdown_exit_code(capsys, monkeypatch):
    from hlamkit import NumericalBreakdown
    import hlamkit.cli as cli

    def boom(*a, **k):
        raise NumericalBreakdown("forced")

    monkeypatch.setattr(cli, "solve", boom)
    code, _, err = run(capsys, "solve", "--method", "bicgstab")
    assert code == 4 and "NumericalBreakdown" in err


def test_solve_outputs(capsys, tmp_path):
    trace, report, hist, plan = (tmp_path / n for n in ("t.jsonl", "r.json", "h.csv", "plan.json"))
    code, out, _ = run(capsys, "solve", "--method", "bicgstab-b1", "--grid", "6x6x6", "--stencil", "27",
                       "--backend", "task", "--ranks", "3", "--trace", str(trace), "--report", str(report),
                       "--residual-csv", str(hist), "--dump-plan", str(plan), "--debug")
    assert code == 0 and out == ""
    doc = json.loads(report.read_text())
    assert doc["ranks"] == 3 and doc["barrier_profile"] == [1, 2]
    events = TraceLog.from_jsonl(trace.read_text())
    assert events.ranks() == [0, 1, 2]
    assert hist.read_text().splitlines()[0] == "iteration,residual"
    assert json.loads(plan.read_text())["rank_count"] == 3


def test_gen(capsys, tmp_path):
    mtx = tmp_path / "a.mtx"
    code, out, _ = run(capsys, "gen", "--grid", "3x3x3", "--stencil", "27", "--out", str(mtx))
    assert code == 0
    info = json.loads(out)
    assert info["rows"] == 27 and info["nnz"] == 343
    assert mtx.read_text().startswith("%%MatrixMarket")


def test_bench(capsys, tmp_path):
    csv_path, json_path = tmp_path / "b.csv", tmp_path / "b.json"
    code, out, _ = run(capsys, "bench", "--grid", "4x4x4", "--ranks", "1,2", "--backends", "seq,task",
                       "--methods", "cg,cg-nb", "--reps", "1", "--csv", str(csv_path), "--json", str(json_path))
    assert code == 0
    assert csv_path.read_text().splitlines()[0].split(",") == CSV_COLUMNS
    assert len(csv_path.read_text().splitlines()) == 1 + 2 * 2 * 2
    doc = json.loads(json_path.read_text())
    assert doc["mode"] == "weak"
    assert out.splitlines()[0].split()[-1] == "eff"


def test_config_file_supplies_defaults(capsys, tmp_path):
    cfg = tmp_path / "hlam.toml"
    cfg.write_text('[solve]\nmethod = "jacobi"\ngrid = "1x1x1"\n')
    code, out, _ = run(capsys, "--config", str(cfg), "solve")
    assert code == 0
    doc = json.loads(out)
    assert doc["method"] == "jacobi" and doc["iterations"] == 1
    code, out, _ = run(capsys, "--config", str(cfg), "solve", "--method", "cg")
    assert json.loads(out)["method"] == "cg"


def test_missing_config_is_usage_error(capsys, tmp_path):
    assert run(capsys, "--config", str(tmp_path / "nope.toml"), "solve")[0] == 2


def test_verify_only_filter(capsys):
    code, out, _ = run(capsys, "verify", "--only", "barriers", "--workers", "2")
    assert code == 0
    assert out.count("[PASS]") == 1
    assert "cg-nb" in out and "all 1 checks passed" in out
    assert run(capsys, "verify", "--only", "nonsense")[0] == 2


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "hlamkit", "solve", "--grid", "4x4x4"],
                          capture_output=True, text=True, timeout=120)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["converged"]
