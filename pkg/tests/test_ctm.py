import numpy as np
import pytest

from ctmflow.ctm import CellParams, TrapezoidFD, demand, service_times, step_dynamics, supply
from ctmflow.errors import LengthMismatch, NegativeResultingVolume, NegativeVolume
from ctmflow.network import grid_network, turning_matrices

from helpers import grid_problem, tandem


def test_trapezoid_balanced_at_critical_volume():
    fd = TrapezoidFD.balanced(120.0, 300.0, 40.0)
    assert fd.demand(120.0) == pytest.approx(40.0)
    assert fd.supply(120.0) == pytest.approx(40.0)
    assert fd.supply(300.0) == 0.0
    assert fd.demand(0.0) == 0.0


def test_demand_supply_reject_negative_volume():
    p = CellParams(300.0, 120.0, 0.5, TrapezoidFD.balanced(120.0, 300.0, 40.0), 0.5)
    with pytest.raises(NegativeVolume):
        demand(p, -1.0)
    with pytest.raises(NegativeVolume):
        supply(p, -1.0)


def test_cell_params_validation():
    fd = TrapezoidFD.balanced(120.0, 300.0, 40.0)
    with pytest.raises(ValueError):
        CellParams(300.0, 120.0, 0.5, fd, a=0.0)
    p = CellParams(300.0, 120.0, 0.5, fd, 0.5, 1.0, 2.0, -3.0)
    assert CellParams.from_dict(p.to_dict()) == p


def test_service_times_positive():
    pd, params = grid_problem()
    assert np.all(service_times(pd.net, params) > 0)


def test_step_dynamics_conserves_vehicles():
    net = grid_network(2, 2)
    R = turning_matrices(net)[0]
    rng = np.random.default_rng(1)
    rho = rng.uniform(10, 100, net.n_cells)
    f = rng.uniform(0, 5, net.n_cells)
    mu = np.array([3.0 if net.is_source(k) else 0.0 for k in range(net.n_cells)])
    out = step_dynamics(net, rho, f, R, mu)
    exits = sum(f[k] for k in range(net.n_cells) if net.is_destination(k))
    assert out.sum() == pytest.approx(rho.sum() + mu.sum() - exits)


def test_step_dynamics_reports_negative_volume():
    net = tandem(2)
    R = turning_matrices(net)[0]
    with pytest.raises(NegativeResultingVolume) as info:
        step_dynamics(net, np.array([1.0, 0.0]), np.array([5.0, 0.0]), R, np.zeros(2))
    assert info.value.volumes[0] == pytest.approx(-4.0)


def test_step_dynamics_shape_check():
    net = tandem(2)
    with pytest.raises(LengthMismatch):
        step_dynamics(net, np.zeros(3), np.zeros(2), np.zeros((2, 2)), np.zeros(2))


def test_problem_bounds_ordered():
    pd, _ = grid_problem()
    assert np.all(pd.x_lo <= pd.x0 + 1e-12)
    assert np.all(pd.f_hi >= 0) and np.all(pd.s_hi >= 0) and np.all(pd.v > 0)
