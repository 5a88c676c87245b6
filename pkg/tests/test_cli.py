import csv
import io
import json

import pytest

from bbsi import KernelRatios, load_bbm
from bbsi.cli import RUN_COLUMNS, fit_loglog_slope, main


def run(argv):
    buf = io.StringIO()
    code = main(argv, buf)
    return code, buf.getvalue()


def rows(text):
    return list(csv.DictReader(io.StringIO(text)))


@pytest.fixture
def ratios_file(tmp_path):
    path = tmp_path / "ratios.json"
    path.write_text(json.dumps(KernelRatios(8, 1e-6, 0.4, 1.05).to_dict()))
    return str(path)


def test_solve_csv_columns():
    code, out = run(["solve", "--layers", "6", "--block-size", "2", "--reps", "2", "--validate"])
    assert code == 0
    lines = out.splitlines()
    assert lines[0].split(",") == RUN_COLUMNS
    rec = rows(out)[0]
    assert rec["solver"] == "rgf" and int(rec["n_lu"]) == 6 and float(rec["max_block_error"]) <= 1e-10


@pytest.mark.parametrize("solver,extra", [("nrgf", ["--bandwidth", "2"]), ("fused", ["--bandwidth", "3"]),
                                          ("ddrgf", ["--plan", "s2:2,1", "--threads", "2"])])
def test_solvers(solver, extra):
    code, out = run(["validate", "--layers", "12", "--block-size", "2", "--solver", solver] + extra)
    assert code == 0 and rows(out)[0]["solver"] == solver


def test_validation_failure_exit_code(capsys):
    code, _ = run(["validate", "--layers", "6", "--block-size", "3", "--tol", "1e-300"])
    assert code == 2
    assert "block (" in capsys.readouterr().err


def test_oracle_cap_exit_code():
    code, _ = run(["validate", "--layers", "6", "--block-size", "4", "--oracle-cap", "8"])
    assert code == 3


def test_invalid_plan_exit_code():
    code, _ = run(["solve", "--layers", "4", "--solver", "ddrgf", "--plan", "s2:4", "--reps", "1"])
    assert code == 1


def test_env_override(monkeypatch):
    monkeypatch.setenv("BBSI_LAYERS", "5")
    monkeypatch.setenv("BBSI_BLOCK_SIZE", "2")
    code, out = run(["solve", "--reps", "1"])
    assert code == 0 and rows(out)[0]["layers"] == "5"
    code, out = run(["solve", "--reps", "1", "--layers", "7"])
    assert rows(out)[0]["layers"] == "7"


def test_matrix_file_round_trip(tmp_path):
    path = tmp_path / "m.bbm"
    run(["solve", "--layers", "5", "--block-size", "2", "--reps", "1", "--write-matrix", str(path)])
    assert load_bbm(path).num_layers == 5
    code, out = run(["validate", "--matrix", str(path)])
    assert code == 0 and rows(out)[0]["layers"] == "5"


def test_scale_json(tmp_path):
    out = tmp_path / "s.json"
    code, _ = run(["scale", "--axis", "layers", "--grid", "4,8,16", "--block-size", "2",
                   "--reps", "2", "--solver", "rgf,nrgf", "--out", str(out)])
    assert code == 0
    data = json.loads(out.read_text())
    assert len(data["rows"]) == 6 and "slope_rgf" in data and "slope_nrgf" in data


def test_scale_threads_axis():
    code, out = run(["scale", "--axis", "threads", "--grid", "1,2", "--layers", "12", "--block-size", "2",
                     "--reps", "1", "--solver", "ddrgf", "--plan", "s2:2"])
    assert code == 0 and [r["threads"] for r in rows(out)] == ["1", "2"]


def test_bench_kernels(tmp_path):
    code, out = run(["bench-kernels", "--sizes", "4,8", "--samples", "3", "--peak", "10", "--mem-bw", "5"])
    assert code == 0
    table = rows(out)
    assert len(table) == 2 and "intensity" in table[0]
    code, out = run(["bench-kernels", "--sizes", ""])
    assert code == 0 and len(out.splitlines()) == 1


def test_tune(ratios_file, tmp_path):
    code, out = run(["tune", "--layers", "1440", "--block-size", "8", "--threads", "64",
                     "--ratios", ratios_file])
    assert code == 0 and "plan: s2:" in out and "orchestrator:" in out
    path = tmp_path / "t.json"
    code, _ = run(["tune", "--layers", "40", "--block-size", "8", "--threads", "1",
                   "--ratios", ratios_file, "--out", str(path), "--execute", "--reps", "1"])
    data = json.loads(path.read_text())
    assert code == 0 and data["plan"] == "rgf" and data["measured_rgf_ms"] > 0


def test_auto_solver(ratios_file):
    code, out = run(["validate", "--layers", "30", "--block-size", "2", "--solver", "auto",
                     "--threads", "1", "--ratios", ratios_file])
    assert code == 0 and rows(out)[0]["solver"] in ("rgf", "ddrgf")


def test_slope():
    assert fit_loglog_slope([1, 2, 4, 8], [3, 24, 192, 1536]) == pytest.approx(3.0)
