"""Inject faults into the agent protocol and watch it recover.

A dropped round of messages is caught when an agent finds a neighbor's value
missing; the round is delivered again. Corrupted minimal-polynomial
coefficients make a cell's balance check fail; the notice floods the
network, every agent rolls back its multipliers and learns again.
"""

import logging

import numpy as np

from ctmflow.centralized import solve, step_size
from ctmflow.distributed import FaultPlan, distributed_solve
from ctmflow.harness import DELTA_PER_EPS, cycle_problem, SimConfig
from ctmflow.network import communication_graph
from ctmflow.qp import build_matrices

logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")

pd, params = cycle_problem(SimConfig(q_in=100.0, cycles=10), 10)
am = build_matrices(pd, params)
eps = step_size(am)
delta = DELTA_PER_EPS * eps
ref = solve(am, eps, delta).f_opt

clean = distributed_solve(pd, params, eps, delta)
print(f"clean run: {clean.rounds} rounds, max |f - f_central| = {np.max(np.abs(clean.f - ref)):.1e}")

adj = communication_graph(pd.net)
lost = {(3, s, r) for s in adj for r in adj[s]}
dropped = distributed_solve(pd, params, eps, delta, plan=FaultPlan(drops=lost))
print(f"\nall messages of round 3 lost: {dropped.retransmissions} retransmission, "
      f"first error: {dropped.protocol_errors[0][1][:70]}...")
print(f"  max |f - f_central| = {np.max(np.abs(dropped.f - ref)):.1e}")

# the cell that needed the longest window has the least trivial coefficients
cell = max(clean.D, key=lambda c: clean.D[c][0])
plan = FaultPlan(corrupt_theta={clean.rounds // 2: (cell, "zeta", 1.0)})
bad = distributed_solve(pd, params, eps, delta, plan=plan)
print(f"\ncoefficients of cell {pd.net.ids[cell]} corrupted mid-run: violations at "
      f"{bad.violations[:3]}, {bad.relearns} relearn(s)")
print(f"  max |f - f_central| = {np.max(np.abs(bad.f - ref)):.1e}")
