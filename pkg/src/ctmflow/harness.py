"""Multi-cycle simulation, fixed-time baseline, observation-count experiment and outputs."""

from __future__ import annotations

import csv
import json
import logging
import platform
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .centralized import solve, step_size
from .ctm import CycleInputs, assemble_problem, step_dynamics
from .errors import ConfigError, CTMFlowError, NegativeResultingVolume
from .final_value import learn_coefficients
from .network import Network, grid_network, turning_matrices
from .qp import build_matrices
from .scenarios import GridDefaults, grid_inputs, grid_params

log = logging.getLogger(__name__)

CONTROLLERS = ("fixed", "centralized", "distributed")
CSV_COLUMNS = ("cycle", "avg_cost", "total_outflow", "iterations")
# stopping threshold relative to the step size when none is configured
DELTA_PER_EPS = 5e-9
# volumes below this many vehicles are set to zero between cycles
VOLUME_FLOOR = 1e-6


@dataclass
class SimConfig:
    """One simulation run on an ``m`` by ``n`` grid.

    ``delta`` of ``None`` means ``5e-9 * eps``: the run stops once the
    multipliers move less than ``5e-9`` times the step, which bounds every
    constraint violation by ``5e-9``. Much tighter values run
    into the rounding floor of the gradient when multipliers are large.
    """

    m: int = 2
    n: int = 2
    cycles: int = 100
    T: float = 90.0
    q_in: float = 100.0
    seed: int = 0
    delta_r: float = 0.05
    controller: str = "centralized"
    eps_safety: float = 0.9
    delta: float | None = None
    max_iter: int = 50_000
    out_dir: str | None = None
    rho0: float = 0.0

    def validate(self) -> None:
        if self.m < 1 or self.n < 1:
            raise ConfigError(f"grid dimensions must be >= 1, got {self.m}x{self.n}")
        if self.cycles < 1:
            raise ConfigError("cycles must be >= 1")
        if self.q_in < 0:
            raise ConfigError("q_in must be non-negative")
        if self.T <= 0:
            raise ConfigError("T must be positive")
        if not 0.0 <= self.delta_r < 1.0:
            raise ConfigError("delta_r must lie in [0, 1)")
        if self.controller not in CONTROLLERS:
            raise ConfigError(f"controller must be one of {CONTROLLERS}, got {self.controller!r}")
        if not 0.0 < self.eps_safety < 1.0:
            raise ConfigError("eps_safety must lie in (0, 1)")
        if self.delta is not None and self.delta <= 0:
            raise ConfigError("delta must be positive")
        if self.max_iter < 1:
            raise ConfigError("max_iter must be >= 1")
        if self.rho0 < 0:
            raise ConfigError("rho0 must be non-negative")


@dataclass
class Metrics:
    """Per-cycle series of one run."""

    avg_cost: list = field(default_factory=list)
    total_outflow: list = field(default_factory=list)
    iterations: list = field(default_factory=list)
    d_max: list = field(default_factory=list)
    total_volume: list = field(default_factory=list)
    max_violation: list = field(default_factory=list)
    fallback: list = field(default_factory=list)
    flows: list = field(default_factory=list, repr=False)
    volumes: list = field(default_factory=list, repr=False)

    def __len__(self):
        return len(self.avg_cost)

    def rows(self):
        for k in range(len(self)):
            yield (k + 1, self.avg_cost[k], self.total_outflow[k], self.iterations[k])


def avg_distribution_cost(params, rho) -> float:
    """``sum a_i rho_i^2 / sum rho_i``, zero for an empty network."""
    rho = np.asarray(rho, float)
    total = float(rho.sum())
    if total <= 0.0:
        return 0.0
    a = np.array([p.a for p in params])
    return float(np.sum(a * rho * rho) / total)


def constraint_violation(pd, f) -> float:
    """Largest violation of the assembled inequality set at ``f``."""
    from .qp import constraint_matrix

    Q, q = constraint_matrix(pd)
    if Q.size == 0:
        return 0.0
    return float(max(0.0, np.max(Q @ np.asarray(f, float) + q)))


# ----------------------------------------------------------------------
# controllers


def fixed_time_controller(net: Network, params, inputs: CycleInputs, pd=None) -> np.ndarray:
    """Constant green splits: every intersection gives its incoming cells equal time.

    ``f_i = min(d_i, x_lo_i, T / (|I(i)| v_i), min_j room_j / (|N+(j)| r_hi_ij))``
    where ``room_j = min(s_j, x_hi_j)`` is shared equally among the cells
    feeding ``j``. Cells draining to the exterior use the whole cycle.
    """
    n = net.n_cells
    if n == 0:
        return np.zeros(0)
    if pd is None:
        pd = assemble_problem(net, params, inputs)
    f = np.empty(n)
    for k in range(n):
        d = float(params[k].fd.demand(inputs.rho[k]))
        share = len(net.same_sink[k]) or 1
        cap = min(d, pd.x_lo[k], pd.T / (share * pd.v[k]))
        for j in net.down[k]:
            room = max(0.0, min(pd.s_hi[j], pd.x_hi[j]))
            cap = min(cap, room / (len(net.up[j]) * pd.R_hi[k, j]))
        f[k] = max(0.0, cap)
    return f


def _solve_cycle(cfg: SimConfig, pd, params, inputs, cycle_seed):
    """Controller output ``(f, iterations, d_max)`` for one cycle."""
    if cfg.controller == "fixed":
        return fixed_time_controller(pd.net, params, inputs, pd=pd), 0, 0
    am = build_matrices(pd, params)
    eps = step_size(am, safety=cfg.eps_safety)
    delta = cfg.delta if cfg.delta is not None else DELTA_PER_EPS * eps
    if cfg.controller == "centralized":
        rep = solve(am, eps, delta, max_iter=cfg.max_iter, raise_on_cap=True)
        return rep.f_opt, rep.iterations, 0
    from .distributed import distributed_solve

    rep = distributed_solve(pd, params, eps, delta, seed=cycle_seed, max_outer=cfg.max_iter)
    return rep.f, rep.iterations, rep.D_max


def realized_ratios(net: Network, rngs) -> np.ndarray:
    """Turning ratios of one cycle: uniform draws inside the bounds, rescaled to sum to one.

    Each row is shifted by a common offset and clipped to its bounds, with
    the offset found by bisection, so the result stays inside
    ``[r_lo, r_hi]`` while summing to one.
    """
    n = net.n_cells
    R = np.zeros((n, n))
    for k in range(n):
        outs = net.down[k]
        if not outs:
            continue
        lo = np.array([net.turning[(k, l)].lower for l in outs])
        hi = np.array([net.turning[(k, l)].upper for l in outs])
        draw = rngs[k].uniform(lo, hi)
        R[k, list(outs)] = _fit_row(draw, lo, hi)
    return R


def _fit_row(r, lo, hi, tol=1e-15):
    a, b = -1.0, 1.0
    for _ in range(200):
        mid = 0.5 * (a + b)
        s = np.clip(r + mid, lo, hi).sum()
        if s > 1.0:
            b = mid
        else:
            a = mid
        if b - a < tol:
            break
    out = np.clip(r + 0.5 * (a + b), lo, hi)
    # remove the last rounding residue on the widest free entry
    free = (out > lo) & (out < hi)
    idx = int(np.argmax(np.where(free, hi - lo, -1.0)))
    out[idx] += 1.0 - out.sum()
    return out


def run_simulation(cfg: SimConfig, net: Network | None = None, params=None) -> Metrics:
    """Simulate ``cfg.cycles`` cycles and collect metrics.

    Random streams: one per cell for inflow and one per cell for turning
    ratios, all spawned from ``cfg.seed``, so results do not depend on the
    controller. A cycle whose solver fails falls back to the fixed-time
    flows and is flagged.
    """
    cfg.validate()
    if net is None:
        net = grid_network(cfg.m, cfg.n, delta_r=cfg.delta_r)
    if params is None:
        params = grid_params(net, GridDefaults(T=cfg.T))
    n = net.n_cells
    seq = np.random.SeedSequence(cfg.seed)
    inflow_seq, ratio_seq, agent_seq = seq.spawn(3)
    mu_rngs = [np.random.default_rng(s) for s in inflow_seq.spawn(n)]
    r_rngs = [np.random.default_rng(s) for s in ratio_seq.spawn(n)]
    agent_seeds = agent_seq.generate_state(cfg.cycles)
    rho_cg = np.array([p.rho_cg for p in params])
    rho = np.full(n, float(cfg.rho0))
    dest = np.array([net.is_destination(k) for k in range(n)])
    metrics = Metrics()
    for cycle in range(cfg.cycles):
        inputs = grid_inputs(net, params, cfg.q_in, rho=rho, T=cfg.T)
        pd = assemble_problem(net, params, inputs)
        fallback = False
        try:
            f, iters, dmax = _solve_cycle(cfg, pd, params, inputs, int(agent_seeds[cycle]))
        except CTMFlowError as exc:
            log.warning("cycle %d: %s; using fixed-time flows", cycle + 1, exc)
            f = fixed_time_controller(net, params, inputs, pd=pd)
            iters, dmax, fallback = 0, 0, True
        f = np.maximum(f, 0.0)
        # realized inflow: Q_in (1 + 0.1 U), never more than the room the estimate left
        u = np.array([g.random() for g in mu_rngs])
        mu = np.where(inputs.mu_hi > 0, cfg.q_in * (1.0 + 0.1 * u), 0.0)
        mu = np.minimum(mu, inputs.mu_hi)
        R = realized_ratios(net, r_rngs)
        try:
            rho = step_dynamics(net, rho, f, R, mu)
        except NegativeResultingVolume as exc:
            log.warning("cycle %d: clamping negative volumes %s", cycle + 1,
                        np.round(exc.volumes[exc.volumes < 0], 12))
            rho = exc.volumes
        rho = np.clip(rho, 0.0, rho_cg)
        # rounding leaves specks of volume on emptied cells; their near-empty
        # flow boxes make the dual iteration crawl, so clear them
        rho[rho < VOLUME_FLOOR] = 0.0
        metrics.avg_cost.append(avg_distribution_cost(params, rho))
        metrics.total_outflow.append(float(f[dest].sum()))
        metrics.iterations.append(int(iters))
        metrics.d_max.append(int(dmax))
        metrics.total_volume.append(float(rho.sum()))
        metrics.max_violation.append(constraint_violation(pd, f))
        metrics.fallback.append(fallback)
        metrics.flows.append(f.copy())
        metrics.volumes.append(rho.copy())
        log.debug("cycle %d: cost %.4f outflow %.2f iterations %d", cycle + 1,
                  metrics.avg_cost[-1], metrics.total_outflow[-1], iters)
    return metrics


def cycle_problem(cfg: SimConfig, cycle: int):
    """Problem data and parameters of cycle ``cycle`` (1-based) of a run.

    The run is replayed with ``cfg.controller`` up to the start of that
    cycle.
    """
    cfg.validate()
    if cycle < 1:
        raise ConfigError("cycle numbers start at 1")
    net = grid_network(cfg.m, cfg.n, delta_r=cfg.delta_r)
    params = grid_params(net, GridDefaults(T=cfg.T))
    rho = np.full(net.n_cells, float(cfg.rho0))
    if cycle > 1:
        prefix = SimConfig(**{**asdict(cfg), "cycles": cycle - 1, "out_dir": None})
        rho = run_simulation(prefix, net, params).volumes[-1]
    inputs = grid_inputs(net, params, cfg.q_in, rho=rho, T=cfg.T)
    return assemble_problem(net, params, inputs), params


# ----------------------------------------------------------------------
# observation counts of the inner recursions


@dataclass
class Table1Row:
    m: int
    n: int
    cells: int
    naive: int
    final_value: int
    naive_zeta: int
    naive_flow: int
    d_zeta: int
    d_flow: int
    final_value_error: float

    def as_dict(self) -> dict:
        return asdict(self)


def naive_sweeps(M, h, x0, tol: float, cap: int = 100_000) -> int:
    """Jacobi sweeps until every coordinate is within ``tol`` of the fixed point."""
    M = np.asarray(M, float)
    target = np.linalg.solve(np.eye(M.shape[0]) - M, h)
    x = np.array(x0, float)
    for k in range(cap + 1):
        if np.max(np.abs(x - target)) <= tol:
            return k
        x = M @ x + h
    raise CTMFlowError(f"plain iteration did not reach {tol} within {cap} sweeps")


def table1_experiment(dims, tol: float = 1e-9, seed: int = 0, delta_r: float = 0.05) -> list:
    """Plain Jacobi sweeps versus final-value observations on grid networks.

    For each grid both inner recursions (multipliers with ``R``, flows with
    ``R^T``) are run from a random start with a random forcing term. Column
    ``naive`` is the number of sweeps plain iteration needs to bring every
    coordinate within ``tol`` of the fixed point; ``final_value`` is the
    largest number of observations any cell needs before its Hankel
    matrix turns defective. ``final_value_error`` is the largest error of
    the limits computed from those observations.
    """
    rows = []
    for m, n in dims:
        if m < 1 or n < 1:
            raise ConfigError(f"grid dimensions must be >= 1, got {m}x{n}")
        net = grid_network(m, n, delta_r=delta_r)
        R = turning_matrices(net)[0]
        N = net.n_cells
        rng = np.random.default_rng(seed)
        counts, ds, errs = [], [], []
        for M in (R, R.T):
            h = rng.uniform(0.0, 1.0, N)
            x0 = rng.uniform(0.0, 1.0, N)
            counts.append(naive_sweeps(M, h, x0, tol))
            thetas, D = learn_coefficients((M, h), x0)
            ds.append(int(D.max()))
            # limits from the observation streams the detectors consumed
            target = np.linalg.solve(np.eye(N) - M, h)
            x = x0.copy()
            stream = [x]
            for _ in range(int(D.max()) - 1):
                x = M @ x + h
                stream.append(x)
            stream = np.array(stream)
            err = 0.0
            for i, th in enumerate(thetas):
                window = stream[D[i] - th.size:D[i], i]
                err = max(err, abs(float(th @ window / th.sum()) - target[i]))
            errs.append(err)
        rows.append(Table1Row(m, n, N, max(counts), max(ds), counts[0], counts[1], ds[0], ds[1],
                              max(errs)))
    return rows


# ----------------------------------------------------------------------
# outputs


def _csv_writer(fh):
    # RFC 4180: CRLF line ends, fields quoted when they need it
    return csv.writer(fh, lineterminator="\r\n", quoting=csv.QUOTE_MINIMAL)


def write_metrics_csv(metrics: Metrics, path) -> Path:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = _csv_writer(fh)
        w.writerow(CSV_COLUMNS)
        for cycle, cost, out, it in metrics.rows():
            w.writerow((cycle, repr(float(cost)), repr(float(out)), it))
    return path


def manifest(cfg: SimConfig | None = None, extra: dict | None = None) -> dict:
    """Run description: configuration, parameter defaults and library versions."""
    doc = {
        "package": "ctmflow",
        "version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "grid_defaults": asdict(GridDefaults()),
    }
    if cfg is not None:
        doc["config"] = asdict(cfg)
        doc["seed"] = cfg.seed
    if extra:
        doc.update(extra)
    return doc


def emit_outputs(metrics: Metrics, path, cfg: SimConfig | None = None) -> dict:
    """Write ``cycles.csv`` and ``manifest.json`` into directory ``path``.

    Two runs with the same configuration produce byte-identical files.

    Returns
    -------
    dict
        ``{"csv": Path, "manifest": Path}``
    """
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = write_metrics_csv(metrics, out / "cycles.csv")
    summary = {
        "cycles": len(metrics),
        "fallback_cycles": [k + 1 for k, fb in enumerate(metrics.fallback) if fb],
        "max_violation": max(metrics.max_violation, default=0.0),
        "d_max": max(metrics.d_max, default=0),
    }
    man_path = out / "manifest.json"
    man_path.write_text(json.dumps(manifest(cfg, {"summary": summary}), indent=2, sort_keys=True) + "\n",
                        encoding="utf-8")
    return {"csv": csv_path, "manifest": man_path}


def write_eta_trace(step_norms, path) -> Path:
    """Per-iteration multiplier step norms of one solve, one row per iteration."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = _csv_writer(fh)
        w.writerow(("iteration", "step_norm"))
        for k, s in enumerate(step_norms, start=1):
            w.writerow((k, repr(float(s))))
    return path


def write_table1(rows, path) -> Path:
    path = Path(path)
    fields = list(Table1Row.__dataclass_fields__)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = _csv_writer(fh)
        w.writerow(fields)
        for r in rows:
            w.writerow([getattr(r, f) for f in fields])
    return path
