"""Multiplier step norms of one cycle: fast decay, then a plateau.

Writes ``demo_out/step_norms.csv`` and prints where the norm falls below
one thousandth of the first step.
"""

from pathlib import Path

import numpy as np

from ctmflow.centralized import solve, step_size
from ctmflow.harness import DELTA_PER_EPS, SimConfig, cycle_problem, write_eta_trace
from ctmflow.qp import build_matrices

cfg = SimConfig(q_in=100.0, cycles=10)
for cycle in (1, 10):
    pd, params = cycle_problem(cfg, cycle)
    am = build_matrices(pd, params)
    eps = step_size(am, cfg.eps_safety)
    rep = solve(am, eps, DELTA_PER_EPS * eps, trace=True)
    s = np.array(rep.step_norms)
    k = int(np.argmax(s < 1e-3 * s[0])) + 1
    print(f"cycle {cycle:>2}: first step {s[0]:.3g}, below 1e-3 of it after {k} iterations, "
          f"stopped after {rep.iterations}")
Path("demo_out").mkdir(exist_ok=True)
print("trace:", write_eta_trace(rep.step_norms, "demo_out/step_norms.csv"))
