"""A hundred cycles of the 2x2 grid under normal and heavy inflow.

For each load the optimizing controller is compared with equal fixed
green splits. The per-cycle series are written to ``demo_out/`` as CSV so
they can be plotted as bar charts.
"""

from pathlib import Path

import numpy as np

from ctmflow.harness import SimConfig, emit_outputs, run_simulation

out = Path("demo_out")
for q_in, label in ((100.0, "normal"), (150.0, "heavy")):
    res = {}
    for controller in ("fixed", "centralized"):
        cfg = SimConfig(cycles=100, q_in=q_in, controller=controller)
        res[controller] = run_simulation(cfg)
        emit_outputs(res[controller], out / f"{label}_{controller}", cfg)
    opt, fix = res["centralized"], res["fixed"]
    better = np.mean(np.array(opt.avg_cost) < np.array(fix.avg_cost))
    print(f"{label} load (q_in={q_in:g}):")
    print(f"  mean distribution cost  optimized {np.mean(opt.avg_cost):7.2f}   fixed {np.mean(fix.avg_cost):7.2f}"
          f"   (lower in {better:.0%} of cycles)")
    print(f"  mean outflow per cycle  optimized {np.mean(opt.total_outflow):7.1f}   fixed {np.mean(fix.total_outflow):7.1f}")
    print(f"  vehicles in network at the end: {opt.total_volume[-1]:.0f} vs {fix.total_volume[-1]:.0f}")
print(f"series written under {out.resolve()}")
