"""Parameter sets and random problem instances.

Grid defaults: congestion volume 300, cost weights 0.55 on entry cells and
0.5 elsewhere, flow rewards -20 on exit cells and -10 elsewhere, a 90 s
cycle, 0.5 s of green per vehicle, critical volume at 40% of congestion,
and a demand/supply capacity equal to the green-time limit ``T / v`` of
the cell. The choices not fixed by the grid experiments are listed in the
run manifest.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ctm import CellParams, CycleInputs, TrapezoidFD, service_times
from .network import Network, random_network, spectral_radius, turning_matrices

MAX_RANDOM_RADIUS = 0.9


@dataclass(frozen=True)
class GridDefaults:
    rho_cg: float = 300.0
    T: float = 90.0
    omega: float = 0.5
    rho_cr_frac: float = 0.4
    a_source: float = 0.55
    a_other: float = 0.5
    w_exit: float = -20.0
    w_other: float = -10.0


def grid_params(net: Network, d: GridDefaults = GridDefaults()) -> list:
    """Per-cell parameters for the grid experiments."""
    rho_cr = d.rho_cr_frac * d.rho_cg
    # service times only depend on omega and the nominal splits
    probe = [CellParams(d.rho_cg, rho_cr, d.omega, TrapezoidFD.balanced(rho_cr, d.rho_cg, 1.0), 1.0)
             for _ in range(net.n_cells)]
    v = service_times(net, probe)
    params = []
    for k in range(net.n_cells):
        fd = TrapezoidFD.balanced(rho_cr, d.rho_cg, d.T / v[k])
        params.append(CellParams(
            rho_cg=d.rho_cg, rho_cr=rho_cr, omega=d.omega, fd=fd,
            a=d.a_source if net.is_source(k) else d.a_other,
            w=d.w_exit if net.is_destination(k) else d.w_other,
        ))
    return params


def inflow_estimates(net: Network, q_in: float, spread: float = 0.1):
    """Nominal, lower and upper inflow for ``mu = q_in * (1 + spread * U[0, 1])``.

    The nominal value is the mean of the distribution.
    """
    src = np.array([net.is_source(k) for k in range(net.n_cells)], float)
    lo = q_in * src
    hi = q_in * (1.0 + spread) * src
    return 0.5 * (lo + hi), lo, hi


def grid_inputs(net: Network, params, q_in: float, rho=None, T: float = 90.0) -> CycleInputs:
    """Cycle inputs with the reference inflow law, capped so no cell can overflow."""
    rho = np.zeros(net.n_cells) if rho is None else np.asarray(rho, float)
    mu, lo, hi = inflow_estimates(net, q_in)
    room = np.array([max(0.0, min(p.rho_cg - r, p.fd.supply(r))) for p, r in zip(params, rho)])
    return CycleInputs(rho, np.minimum(mu, room), np.minimum(lo, room), np.minimum(hi, room), T)


def random_instance(rng: np.random.Generator, n_cells: int, delta_r: float = 0.05,
                    max_radius: float = MAX_RANDOM_RADIUS):
    """Random network, parameters and cycle inputs with a non-empty feasible set.

    Volumes, inflows and cost coefficients are spread widely enough that
    optima hit every kind of constraint across a batch of draws. Networks
    whose nominal turning matrix has spectral radius above ``max_radius``
    are redrawn: near-closed loops make the dual problem so badly
    conditioned that gradient steps need hundreds of thousands of
    iterations.
    """
    while True:
        net = random_network(rng, n_cells, delta_r=delta_r)
        if spectral_radius(turning_matrices(net)[0]) <= max_radius:
            break
    T = float(rng.uniform(30.0, 120.0))
    params = []
    for k in range(n_cells):
        rho_cg = float(rng.uniform(50.0, 300.0))
        rho_cr = float(rng.uniform(0.2, 0.6)) * rho_cg
        omega = float(rng.uniform(0.5, 3.0))
        cap = float(rng.uniform(0.2, 0.8)) * rho_cg
        params.append(CellParams(
            rho_cg=rho_cg, rho_cr=rho_cr, omega=omega,
            fd=TrapezoidFD.balanced(rho_cr, rho_cg, cap),
            a=float(rng.uniform(0.2, 1.0)),
            b=float(rng.uniform(-5.0, 5.0)),
            c=float(rng.uniform(0.0, 10.0)),
            w=float(rng.uniform(-40.0, 0.0)),
        ))
    rho = np.array([float(rng.uniform(0.0, 0.8)) * p.rho_cg for p in params])
    mu = np.zeros(n_cells)
    lo = np.zeros(n_cells)
    hi = np.zeros(n_cells)
    for k in range(n_cells):
        if net.is_source(k):
            room = params[k].rho_cg - rho[k]
            hi[k] = float(rng.uniform(0.0, 0.9)) * room
            lo[k] = float(rng.uniform(0.8, 1.0)) * hi[k]
            mu[k] = 0.5 * (lo[k] + hi[k])
    return net, params, CycleInputs(rho, mu, lo, hi, T)
