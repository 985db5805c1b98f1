"""Solve one signal cycle of the 2x2 grid three ways and compare the flows.

The active-set oracle gives the exact optimum. Projected dual ascent on the
assembled problem should land on the same flows, and so should the agents
that only talk to their neighbors.
"""

import time

import numpy as np

from ctmflow.centralized import solve, step_size
from ctmflow.distributed import distributed_solve
from ctmflow.harness import DELTA_PER_EPS, constraint_violation
from ctmflow.network import grid_network
from ctmflow.ctm import assemble_problem
from ctmflow.qp import build_matrices, oracle_solve
from ctmflow.scenarios import GridDefaults, grid_inputs, grid_params

net = grid_network(2, 2)
params = grid_params(net, GridDefaults())
# half-loaded network with the default inflow level at the entry cells
inputs = grid_inputs(net, params, q_in=100.0, rho=np.full(net.n_cells, 50.0))
pd = assemble_problem(net, params, inputs)
print(f"{net.n_cells} cells, {len(net.intersections)} intersections")

x_ref, f_ref = oracle_solve(pd, params)

am = build_matrices(pd, params)
eps = step_size(am)
delta = DELTA_PER_EPS * eps
t0 = time.perf_counter()
cen = solve(am, eps, delta)
print(f"dual ascent: {cen.iterations} iterations in {time.perf_counter() - t0:.2f}s, "
      f"max |f - oracle| = {np.max(np.abs(cen.f_opt - f_ref)):.1e}")

t0 = time.perf_counter()
dist = distributed_solve(pd, params, eps, delta)
print(f"agents: {dist.iterations} outer iterations, {dist.rounds} message rounds, "
      f"D_max = {dist.D_max}, {time.perf_counter() - t0:.1f}s")
print(f"max |f_agents - f_dual| = {np.max(np.abs(dist.f - cen.f_opt)):.1e}")
print(f"largest constraint violation: {constraint_violation(pd, dist.f):.1e}")

print("\ncell  oracle f   agents f")
for k in range(net.n_cells):
    print(f"{net.ids[k]:>4}  {f_ref[k]:8.3f}  {dist.f[k]:8.3f}")
