import csv
import io
import json

import numpy as np
import pytest

from ctmflow.ctm import assemble_problem
from ctmflow.errors import ConfigError
from ctmflow.harness import (
    CSV_COLUMNS,
    Metrics,
    SimConfig,
    avg_distribution_cost,
    constraint_violation,
    emit_outputs,
    fixed_time_controller,
    naive_sweeps,
    realized_ratios,
    run_simulation,
    table1_experiment,
    write_eta_trace,
    write_metrics_csv,
)
from ctmflow.network import grid_network
from ctmflow.scenarios import GridDefaults, grid_inputs, grid_params


def test_config_validation():
    for bad in (dict(cycles=0), dict(q_in=-1), dict(controller="magic"), dict(eps_safety=1.0),
                dict(m=0), dict(delta=0.0)):
        with pytest.raises(ConfigError):
            SimConfig(**bad).validate()
    with pytest.raises(ConfigError):
        run_simulation(SimConfig(cycles=0))


def test_avg_cost_of_empty_network_is_zero():
    params = grid_params(grid_network(1, 1))
    assert avg_distribution_cost(params, np.zeros(8)) == 0.0


def test_realized_ratios_inside_bounds():
    net = grid_network(2, 2)
    rngs = [np.random.default_rng(k) for k in range(net.n_cells)]
    for _ in range(20):
        R = realized_ratios(net, rngs)
        for (k, l), t in net.turning.items():
            assert t.lower - 1e-12 <= R[k, l] <= t.upper + 1e-12
        for k in range(net.n_cells):
            assert R[k].sum() == pytest.approx(0.0 if net.is_destination(k) else 1.0, abs=1e-12)


def test_fixed_time_controller_feasible():
    net = grid_network(2, 2)
    params = grid_params(net, GridDefaults())
    for rho in (0.0, 50.0, 150.0, 290.0):
        inputs = grid_inputs(net, params, 100.0, rho=np.full(net.n_cells, rho))
        pd = assemble_problem(net, params, inputs)
        f = fixed_time_controller(net, params, inputs, pd=pd)
        assert np.all(f >= 0)
        assert constraint_violation(pd, f) < 1e-9


def test_determinism_and_csv(tmp_path):
    cfg = SimConfig(cycles=3, seed=11)
    a = emit_outputs(run_simulation(cfg), tmp_path / "a", cfg)
    b = emit_outputs(run_simulation(cfg), tmp_path / "b", cfg)
    assert a["csv"].read_bytes() == b["csv"].read_bytes()
    raw = a["csv"].read_bytes()
    assert raw.count(b"\r\n") == 4
    rows = list(csv.reader(io.StringIO(raw.decode())))
    assert tuple(rows[0]) == CSV_COLUMNS
    assert [r[0] for r in rows[1:]] == ["1", "2", "3"]
    man = json.loads(a["manifest"].read_text())
    assert man["seed"] == 11 and man["config"]["cycles"] == 3
    assert "numpy" in man and man["grid_defaults"]["rho_cg"] == 300.0


def test_csv_quoting(tmp_path):
    m = Metrics(avg_cost=[1.0], total_outflow=[2.0], iterations=['3,"x"'])
    text = write_metrics_csv(m, tmp_path / "q.csv").read_text()
    assert '"3,""x"""' in text


def test_no_inflow_drains_network():
    m = run_simulation(SimConfig(cycles=30, q_in=0.0, rho0=100.0))
    assert m.total_volume[-1] < 1e-3 * m.total_volume[0]
    assert m.avg_cost[-1] < 1e-3 * m.avg_cost[0] + 1e-9


def test_controllers_feasible_every_cycle():
    for controller in ("fixed", "centralized"):
        m = run_simulation(SimConfig(cycles=10, controller=controller))
        assert max(m.max_violation) < 1e-8
        assert not any(m.fallback)
        assert min(m.total_outflow) >= 0


def test_distributed_controller_matches_centralized():
    runs = {c: run_simulation(SimConfig(cycles=2, controller=c, q_in=60.0, rho0=40.0))
            for c in ("centralized", "distributed")}
    for fc, fd in zip(runs["centralized"].flows, runs["distributed"].flows):
        np.testing.assert_allclose(fd, fc, atol=1e-6)


def test_naive_sweeps_count():
    M = np.array([[0.5]])
    # |x_k - 2| = 2 * 0.5^k with x0 = 0, below 1e-3 after 11 sweeps
    assert naive_sweeps(M, np.array([1.0]), np.array([0.0]), 1e-3) == 11


def test_table1_small_grid():
    (row,) = table1_experiment([(2, 2)])
    assert row.cells == 24
    assert row.final_value <= row.naive
    assert row.final_value_error < 1e-8


def test_eta_trace_file(tmp_path):
    p = write_eta_trace([3.0, 1.0, 0.5], tmp_path / "t.csv")
    rows = list(csv.reader(p.open(newline="")))
    assert rows[0] == ["iteration", "step_norm"] and len(rows) == 4
