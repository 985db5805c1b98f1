"""Build the agents of one cycle and run them to convergence on a bus."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..errors import NonConvergence, ProtocolViolation
from ..network import communication_graph, graph_diameter
from ..qp import build_matrices
from ..centralized import step_size
from .agent import DONE, AgentState
from .bus import FaultPlan, SyncBus, Transport

log = logging.getLogger(__name__)

DEFAULT_MAX_OUTER = 50_000


@dataclass
class DistributedReport:
    f: np.ndarray
    x: np.ndarray
    eta: np.ndarray
    iterations: int
    rounds: int
    D_max: int
    relearns: int = 0
    retransmissions: int = 0
    violations: list = field(default_factory=list)
    protocol_errors: list = field(default_factory=list)
    D: dict = field(default_factory=dict, repr=False)
    eta_trace: list = field(default_factory=list, repr=False)


def build_agents(pd, params, eps: float, delta: float, seed: int = 0, trace: bool = False) -> list:
    """One :class:`AgentState` per cell, holding only local data.

    Each agent gets its own random stream spawned from ``seed``.
    """
    net = pd.net
    n = pd.n
    adjacency = communication_graph(net)
    diam = graph_diameter(adjacency)
    streams = np.random.SeedSequence(seed).spawn(n)
    agents = []
    for k in range(n):
        consts = dict(x0=pd.x0[k], x_lo=pd.x_lo[k], x_hi=pd.x_hi[k], f_hi=pd.f_hi[k],
                      s_hi=pd.s_hi[k], v=pd.v[k], T=pd.T, a=params[k].a, b=params[k].b,
                      w=params[k].w)
        down = [(j, pd.R[k, j], pd.R_lo[k, j], pd.R_hi[k, j]) for j in net.down[k]]
        up = [(j, pd.R[j, k], pd.R_lo[j, k], pd.R_hi[j, k]) for j in net.up[k]]
        same = [(j, pd.v[j]) for j in net.same_sink[k]]
        agents.append(AgentState(k, consts, down, up, same, n, diam, eps, delta,
                                 np.random.default_rng(streams[k]), comm=adjacency[k], trace=trace))
    return agents


def run_agents(agents, bus: Transport, plan: FaultPlan | None = None, max_outer: int = DEFAULT_MAX_OUTER):
    """Drive the agents round by round until all are done.

    A round whose inbox some agent rejects is aborted before any agent
    changes state, and the previous round's messages are delivered again
    without injected faults.

    Returns
    -------
    rounds, retransmissions, protocol_errors
    """
    plan = plan or FaultPlan()
    if plan.learning_init is not None:
        z0 = plan.learning_init.get("zeta")
        f0 = plan.learning_init.get("flow")
        for a in agents:
            a.learn_init = (float(z0[a.k]) if z0 is not None else float(a.rng.random()),
                            float(f0[a.k]) if f0 is not None else float(a.rng.random()))
    outboxes = {a.k: a.start() for a in agents}
    rounds = 0
    retrans = 0
    errors = []
    while True:
        rounds += 1
        if rounds in plan.corrupt_theta:
            cell, which, scale = plan.corrupt_theta[rounds]
            _corrupt(agents[cell], which, scale)
        inboxes = bus.deliver(outboxes, rounds)
        try:
            parsed = [a.receive(inboxes[a.k]) for a in agents]
        except ProtocolViolation as exc:
            log.warning("round %d aborted: %s", rounds, exc)
            errors.append((rounds, str(exc)))
            retrans += 1
            inboxes = bus.deliver(outboxes, rounds, faults=False)
            parsed = [a.receive(inboxes[a.k]) for a in agents]
        outboxes = {a.k: a.step(got) for a, got in zip(agents, parsed)}
        if all(a.phase == DONE for a in agents):
            return rounds, retrans, errors
        if max(a.iterations for a in agents) >= max_outer and not any(a.closing for a in agents):
            raise NonConvergence(f"no global stop within {max_outer} outer iterations")


def _corrupt(agent, which, scale):
    name = "theta_zeta" if which == "zeta" else "theta_flow"
    theta = getattr(agent, name)
    if theta is None:
        return
    setattr(agent, name, tuple(t * (1.0 + scale * (i + 1)) for i, t in enumerate(theta)))
    log.info("corrupted %s of agent %d", name, agent.k)


def distributed_solve(pd, params, eps: float | None = None, delta: float | None = None, *,
                      seed: int = 0, max_outer: int = DEFAULT_MAX_OUTER, plan: FaultPlan | None = None,
                      bus: Transport | None = None, trace: bool = False) -> DistributedReport:
    """Solve one cycle with one agent per cell.

    Parameters
    ----------
    pd : ProblemData
        Per-cell constants; each agent receives only its own slice.
    params : sequence of CellParams
    eps : float, optional
        Multiplier step shared by all agents. Computed centrally from the
        assembled norms when omitted.
    delta : float, optional
        Per-agent stopping threshold on the largest change of its six
        multipliers. Defaults to ``5e-9 * eps``.
    seed : int
        Seed of the agents' random starting states.
    max_outer : int
    plan : FaultPlan, optional
        Faults to inject.
    bus : Transport, optional
        Defaults to a :class:`SyncBus` over the communication graph.
    trace : bool
        Record the stacked multipliers after every outer iteration.

    Raises
    ------
    NonConvergence
        If the outer loop has not stopped after ``max_outer`` iterations.
    """
    if eps is None:
        eps = step_size(build_matrices(pd, params))
    if delta is None:
        delta = 5e-9 * eps
    agents = build_agents(pd, params, eps, delta, seed=seed, trace=trace)
    if bus is None:
        bus = SyncBus(communication_graph(pd.net), plan=plan)
    rounds, retrans, errors = run_agents(agents, bus, plan=plan, max_outer=max_outer)
    f = np.array([a.f_star for a in agents])
    x = pd.x0 - f + pd.R.T @ f
    eta = np.array([a.eta for a in agents]).ravel()
    trace_rows = []
    if trace:
        n_it = agents[0].iterations
        trace_rows = [np.zeros(6 * len(agents))]
        for it in range(n_it):
            trace_rows.append(np.array([a.eta_trace[it] for a in agents]).ravel())
    return DistributedReport(
        f=f, x=x, eta=eta,
        iterations=agents[0].iterations,
        rounds=rounds,
        D_max=agents[0].D_max,
        relearns=agents[0].relearns,
        retransmissions=retrans,
        violations=[(a.k, it) for a in agents for it in a.violations],
        protocol_errors=errors,
        D={a.k: (a.D_zeta, a.D_flow) for a in agents},
        eta_trace=trace_rows,
    )
