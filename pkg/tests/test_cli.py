import json

import pytest

from ctmflow.cli import EXIT_CONFIG, EXIT_OK, EXIT_SOLVER, main
from ctmflow.network import build_network


def test_gen_grid_output_loads(tmp_path):
    out = tmp_path / "g.json"
    assert main(["gen-grid", "--m", "1", "--n", "2", "--out", str(out)]) == EXIT_OK
    assert build_network(out).n_cells == 14


def test_solve_once_json(capsys, tmp_path):
    trace = tmp_path / "trace.csv"
    assert main(["solve-once", "--rho", "50", "--trace-out", str(trace)]) == EXIT_OK
    doc = json.loads(capsys.readouterr().out)
    assert len(doc["f"]) == 24
    assert doc["kkt_at_f"]["primal_ineq_max_violation"] < 1e-8
    assert trace.read_bytes().startswith(b"iteration,step_norm\r\n")


def test_simulate_writes_outputs(tmp_path, capsys):
    assert main(["simulate", "--cycles", "2", "--out", str(tmp_path)]) == EXIT_OK
    assert (tmp_path / "cycles.csv").exists() and (tmp_path / "manifest.json").exists()


def test_solver_failure_exit_code(capsys):
    assert main(["solve-once", "--rho", "50", "--max-iter", "3"]) == EXIT_SOLVER


@pytest.mark.parametrize("argv", [
    ["simulate", "--cycles", "0"],
    ["solve-once", "--rho", "-5"],
    ["solve-once", "--network", "/nonexistent/net.json"],
    ["table1", "--dims", "2by2"],
    ["nosuchcommand"],
])
def test_config_errors(argv, capsys):
    assert main(argv) == EXIT_CONFIG


def test_log_level_env(monkeypatch, capsys):
    monkeypatch.setenv("CTMFLOW_LOG", "chatty")
    assert main(["gen-grid"]) == EXIT_CONFIG
    monkeypatch.setenv("CTMFLOW_LOG", "debug")
    assert main(["gen-grid"]) == EXIT_OK
