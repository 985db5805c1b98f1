"""Command-line entry point.

Subcommands: ``simulate``, ``table1``, ``solve-once`` and ``gen-grid``.
Exit status is 0 on success, 2 when a solver fails and 3 on a bad
configuration. ``CTMFLOW_LOG`` sets the log level (default ``WARNING``).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .centralized import solve, step_size
from .ctm import assemble_problem
from .errors import ConfigError, CTMFlowError, NetworkError
from .harness import (
    CONTROLLERS,
    DELTA_PER_EPS,
    SimConfig,
    emit_outputs,
    fixed_time_controller,
    run_simulation,
    table1_experiment,
    write_eta_trace,
    write_table1,
)
from .network import build_network, describe, grid_network
from .qp import build_matrices, kkt_residuals
from .scenarios import GridDefaults, grid_inputs, grid_params

EXIT_OK = 0
EXIT_SOLVER = 2
EXIT_CONFIG = 3
LOG_ENV = "CTMFLOW_LOG"

log = logging.getLogger("ctmflow")


def _dims(text: str):
    try:
        m, n = text.lower().split("x")
        return int(m), int(n)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected MxN, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ctmflow", description="Traffic-flow control on CTM grid networks.")
    sub = p.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run a multi-cycle simulation")
    sim.add_argument("--m", type=int, default=2, help="grid rows")
    sim.add_argument("--n", type=int, default=2, help="grid columns")
    sim.add_argument("--cycles", type=int, default=100)
    sim.add_argument("--T", type=float, default=90.0, help="cycle length in seconds")
    sim.add_argument("--q-in", type=float, default=100.0, help="inflow level per source cell")
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--delta-r", type=float, default=0.05, help="turning-ratio uncertainty fraction")
    sim.add_argument("--controller", choices=CONTROLLERS, default="centralized")
    sim.add_argument("--eps-safety", type=float, default=SimConfig.eps_safety)
    sim.add_argument("--delta", type=float, default=None, help="stopping threshold on the multiplier step")
    sim.add_argument("--max-iter", type=int, default=SimConfig.max_iter)
    sim.add_argument("--out", default=None, help="directory for cycles.csv and manifest.json")

    t1 = sub.add_parser("table1", help="plain sweeps versus final-value observations")
    t1.add_argument("--dims", type=_dims, nargs="+", default=[(2, 2), (2, 5), (5, 5), (5, 10)])
    t1.add_argument("--tol", type=float, default=1e-9)
    t1.add_argument("--seed", type=int, default=0)
    t1.add_argument("--out", default=None, help="CSV file")

    one = sub.add_parser("solve-once", help="solve a single cycle and print the flows as JSON")
    src = one.add_mutually_exclusive_group()
    src.add_argument("--network", help="network description file")
    src.add_argument("--grid", type=_dims, default=(2, 2), help="grid dimensions MxN")
    one.add_argument("--q-in", type=float, default=100.0)
    one.add_argument("--rho", type=float, default=0.0, help="initial volume of every cell")
    one.add_argument("--controller", choices=CONTROLLERS, default="centralized")
    one.add_argument("--eps-safety", type=float, default=SimConfig.eps_safety)
    one.add_argument("--delta", type=float, default=None)
    one.add_argument("--max-iter", type=int, default=SimConfig.max_iter)
    one.add_argument("--seed", type=int, default=0)
    one.add_argument("--trace-out", default=None, help="CSV of per-iteration step norms")

    gg = sub.add_parser("gen-grid", help="print a grid network description")
    gg.add_argument("--m", type=int, default=2)
    gg.add_argument("--n", type=int, default=2)
    gg.add_argument("--delta-r", type=float, default=0.05)
    gg.add_argument("--out", default=None)
    return p


def _setup_logging():
    level = os.environ.get(LOG_ENV, "WARNING").upper()
    if not isinstance(logging.getLevelName(level), int):
        raise ConfigError(f"{LOG_ENV}={level!r} is not a log level")
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def cmd_simulate(args) -> int:
    cfg = SimConfig(m=args.m, n=args.n, cycles=args.cycles, T=args.T, q_in=args.q_in, seed=args.seed,
                    delta_r=args.delta_r, controller=args.controller, eps_safety=args.eps_safety,
                    delta=args.delta, max_iter=args.max_iter, out_dir=args.out)
    metrics = run_simulation(cfg)
    if args.out:
        paths = emit_outputs(metrics, args.out, cfg)
        print(f"wrote {paths['csv']} and {paths['manifest']}")
    print(json.dumps({
        "cycles": len(metrics),
        "mean_avg_cost": float(np.mean(metrics.avg_cost)),
        "mean_total_outflow": float(np.mean(metrics.total_outflow)),
        "fallback_cycles": int(sum(metrics.fallback)),
        "max_violation": float(max(metrics.max_violation)),
    }, indent=2))
    return EXIT_SOLVER if any(metrics.fallback) else EXIT_OK


def cmd_table1(args) -> int:
    if args.tol <= 0:
        raise ConfigError("tol must be positive")
    rows = table1_experiment(args.dims, tol=args.tol, seed=args.seed)
    if args.out:
        write_table1(rows, args.out)
    print(f"{'grid':>6} {'cells':>6} {'naive':>6} {'final':>6} {'error':>9}")
    for r in rows:
        print(f"{r.m:>3}x{r.n:<2} {r.cells:>6} {r.naive:>6} {r.final_value:>6} {r.final_value_error:>9.1e}")
    return EXIT_OK


def cmd_solve_once(args) -> int:
    if args.network:
        net = build_network(Path(args.network))
    else:
        net = grid_network(*args.grid)
    params = grid_params(net, GridDefaults())
    rho = np.full(net.n_cells, float(args.rho))
    if np.any(rho > np.array([p.rho_cg for p in params])) or args.rho < 0:
        raise ConfigError("initial volume must lie in [0, rho_cg]")
    inputs = grid_inputs(net, params, args.q_in, rho=rho)
    pd = assemble_problem(net, params, inputs)
    result = {"cells": list(net.ids), "controller": args.controller}
    if args.controller == "fixed":
        f = fixed_time_controller(net, params, inputs, pd=pd)
    else:
        if not 0.0 < args.eps_safety < 1.0:
            raise ConfigError("eps-safety must lie in (0, 1)")
        am = build_matrices(pd, params)
        eps = step_size(am, safety=args.eps_safety)
        delta = args.delta if args.delta is not None else DELTA_PER_EPS * eps
        if args.controller == "centralized":
            rep = solve(am, eps, delta, max_iter=args.max_iter, trace=args.trace_out is not None,
                        raise_on_cap=True)
            f = rep.f_opt
            result.update(iterations=rep.iterations, kkt=rep.kkt.as_dict())
            if args.trace_out:
                write_eta_trace(rep.step_norms, args.trace_out)
        else:
            from .distributed import distributed_solve

            rep = distributed_solve(pd, params, eps, delta, seed=args.seed, max_outer=args.max_iter)
            f = rep.f
            result.update(iterations=rep.iterations, rounds=rep.rounds, D_max=rep.D_max,
                          relearns=rep.relearns)
        eta = rep.eta_final if args.controller == "centralized" else rep.eta
        x = am.volumes(f)
        result["kkt_at_f"] = kkt_residuals(pd, params, x, f, am.zeta(eta), eta, am=am).as_dict()
    result["f"] = [float(v) for v in f]
    print(json.dumps(result, indent=2))
    return EXIT_OK


def cmd_gen_grid(args) -> int:
    net = grid_network(args.m, args.n, delta_r=args.delta_r)
    text = json.dumps(describe(net), indent=2) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "table1": cmd_table1,
    "solve-once": cmd_solve_once,
    "gen-grid": cmd_gen_grid,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse reports usage errors with status 2; map them to the config code
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        _setup_logging()
        return COMMANDS[args.command](args)
    except (ConfigError, NetworkError, ValueError, OSError, json.JSONDecodeError) as exc:
        log.error("configuration error: %s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CTMFlowError as exc:
        log.error("solver failure: %s", exc)
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
