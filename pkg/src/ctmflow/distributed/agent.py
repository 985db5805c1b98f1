"""Per-cell agents of the distributed dual solver.

An agent owns one road cell. It holds its own problem constants, the split
ratios of the movements touching its cell, and the service times of the
cells sharing its intersection. Everything else it learns from messages of
cells adjacent to it in the communication graph.

Phases
------
learn
    Both inner recursions (multipliers ``zeta`` and flows ``f``) are run
    from random starting points while a Hankel detector watches the agent's
    own coordinate. Once every agent's detectors are done, which agents
    find out through a flood of "done" flags, the agents agree on ``D_max``
    through a flood of maxima and switch to the outer loop at the same
    round.
outer
    One outer iteration takes ``U = max(2 L + 1, diam + 1)`` rounds where
    ``L = D_max``::

        u = 0          check previous finals, update eta, send eta parts and zeta(0)
        u = 1 .. L     zeta sweeps; at u = L finalize zeta*, x*, send f(0)
        u = L+1 .. 2L  flow sweeps; at u = 2L finalize f*, send the finals

    The stop and violation flags computed at ``u = 0`` are flooded during
    the first ``diam`` rounds of the same iteration. A violation anywhere
    rolls every agent back to the multipliers of the checked iteration and
    restarts learning; a global stop makes the running iteration the last
    one (its flows belong to the final multipliers).
confirm
    The finals of the last iteration are checked once more and the
    violation flag is flooded; without a violation the agent is done.
"""

from __future__ import annotations

from ..errors import DegenerateDenominator, MissingNeighborValue, ProtocolViolation, ZetaNotFinalized
from ..final_value import COLLECTING, DEFECTIVE, HankelDetector, final_value
from .messages import Kind, Message

BALANCE_TOL = 1e-6

LEARN = "learn"
OUTER = "outer"
DONE = "done"

ZETA = Kind.ZETA_VALUE
FLOW = Kind.FLOW_VALUE
ETA = Kind.ETA_NEEDED_VALUES
FINAL = Kind.FINAL_FLAG
FLOOD = Kind.VIOLATION_NOTICE
DMAX = Kind.DMAX_BROADCAST


class AgentState:
    """State machine of one cell.

    Parameters
    ----------
    k : int
        Cell index.
    consts : dict
        Own constants ``x0, x_lo, x_hi, f_hi, s_hi, v, T, a, b, w``.
    down : sequence of (j, r, r_lo, r_hi)
        Downstream cells with the ratios ``r_kj``.
    up : sequence of (j, r, r_lo, r_hi)
        Upstream cells with the ratios ``r_jk``.
    same : sequence of (j, v_j)
        Cells draining into the same intersection, this one included.
    n_cells, diameter : int
        Network size (the order bound of the detectors) and communication
        graph diameter; both are configuration.
    eps, delta : float
        Multiplier step and per-agent stopping threshold.
    rng : numpy.random.Generator
    """

    __slots__ = (
        "k", "x0", "x_lo", "x_hi", "f_hi", "s_hi", "v", "T", "a", "b", "w",
        "down", "up", "same", "n_cells", "diam", "eps", "delta", "rng",
        "to_zeta", "to_flow", "to_eta", "to_all", "from_zeta", "from_flow", "from_eta", "from_all",
        "eta", "eta_prev", "iterations", "iterations_prev", "h", "zeta_star", "x_star", "f_star",
        "z_hist", "f_hist", "theta_zeta", "theta_flow", "D_zeta", "D_flow", "D_max",
        "phase", "u", "L", "U", "flood", "flood_active", "closing", "confirming", "expect_finals",
        "finals_in", "bad_final", "last_stop", "relearns", "violations",
        "lv", "lz", "lf", "det_z", "det_f", "l_done", "l_F", "l_b", "l_Fmax", "l_Dmax", "l_start",
        "learn_init", "eta_trace",
    )

    def __init__(self, k, consts, down, up, same, n_cells, diameter, eps, delta, rng,
                 comm=None, trace=False):
        self.k = k
        for name in ("x0", "x_lo", "x_hi", "f_hi", "s_hi", "v", "T", "a", "b", "w"):
            setattr(self, name, float(consts[name]))
        self.down = tuple((int(j), float(r), float(lo), float(hi)) for j, r, lo, hi in down)
        self.up = tuple((int(j), float(r), float(lo), float(hi)) for j, r, lo, hi in up)
        self.same = tuple((int(j), float(vj)) for j, vj in same)
        self.n_cells = int(n_cells)
        self.diam = int(diameter)
        self.eps = float(eps)
        self.delta = float(delta)
        self.rng = rng
        down_ids = {j for j, *_ in self.down}
        up_ids = {j for j, *_ in self.up}
        same_ids = {j for j, _ in self.same} - {k}
        if comm is None:
            comm = down_ids | up_ids | same_ids
        self.to_zeta = tuple(sorted(up_ids))
        self.to_flow = tuple(sorted(down_ids))
        self.to_eta = tuple(sorted(up_ids | same_ids))
        self.to_all = tuple(sorted(comm))
        self.from_zeta = frozenset(down_ids)
        self.from_flow = frozenset(up_ids)
        self.from_eta = frozenset(down_ids | same_ids)
        self.from_all = frozenset(comm)

        self.eta = (0.0,) * 6
        self.eta_prev = self.eta
        self.iterations = 0
        self.iterations_prev = 0
        self.h = None
        self.zeta_star = None
        self.x_star = None
        self.f_star = None
        self.z_hist = []
        self.f_hist = []
        self.theta_zeta = None
        self.theta_flow = None
        self.D_zeta = self.D_flow = self.D_max = 0
        self.phase = LEARN
        self.u = 0
        self.L = self.U = 0
        self.flood = (False, False)
        self.flood_active = False
        self.closing = False
        self.confirming = False
        self.expect_finals = False
        self.finals_in = None
        self.bad_final = False
        self.last_stop = False
        self.relearns = 0
        self.violations = []
        self.learn_init = None
        self.eta_trace = [] if trace else None
        self.lv = 0

    # ------------------------------------------------------------------
    # message plumbing

    def expected(self) -> dict:
        """Senders this agent must hear from in the coming round, by kind."""
        exp = {}
        if self.phase == LEARN:
            # learning messages go out every round, including the first
            if self.from_zeta:
                exp[ZETA] = self.from_zeta
            if self.from_flow:
                exp[FLOW] = self.from_flow
            if self.from_all:
                exp[DMAX] = self.from_all
            return exp
        if self.phase != OUTER:
            return exp
        u = self.u
        if self.expect_finals and self.from_all:
            exp[FINAL] = self.from_all
        if self.flood_active and 1 <= u <= self.diam and self.from_all:
            exp[FLOOD] = self.from_all
        if self.confirming:
            return exp
        L = self.L
        if 1 <= u <= L:
            if self.from_zeta:
                exp[ZETA] = self.from_zeta
            if u == 1 and self.from_eta:
                exp[ETA] = self.from_eta
        elif L < u <= 2 * L and self.from_flow:
            exp[FLOW] = self.from_flow
        return exp

    def receive(self, inbox) -> dict:
        """Sort an inbox by kind and sender, rejecting anything out of phase.

        Does not change the agent, so a round can be aborted after any
        agent rejects its inbox.
        """
        got = {}
        for m in inbox:
            slot = got.get(m.kind)
            if slot is None:
                slot = got[m.kind] = {}
            if m.sender in slot:
                raise ProtocolViolation(f"agent {self.k}: duplicate {m.kind.name} from {m.sender}")
            slot[m.sender] = m.payload
        exp = self.expected()
        for kind, slot in got.items():
            want = exp.get(kind)
            if want is None:
                raise ProtocolViolation(
                    f"agent {self.k}: out-of-phase {kind.name} from {sorted(slot)} ({self.phase}, u={self.u})")
            if not want.issuperset(slot):
                raise ProtocolViolation(f"agent {self.k}: unexpected {kind.name} senders {sorted(slot)}")
        for kind, want in exp.items():
            if kind not in got:
                raise ProtocolViolation(
                    f"agent {self.k}: missing {kind.name} from {sorted(want)} ({self.phase}, u={self.u})")
            if len(got[kind]) != len(want):
                missing = sorted(want - set(got[kind]))
                raise ProtocolViolation(f"agent {self.k}: missing {kind.name} from {missing}")
        return got

    def _msg(self, kind, payload, dests):
        return (dests, Message(self.k, kind, payload))

    # ------------------------------------------------------------------
    # transitions

    def step(self, got: dict) -> list:
        """Advance one round on an already validated inbox; return the outbox."""
        if self.phase == LEARN:
            return self._learn_step(got)
        if self.phase == OUTER:
            return self._outer_step(got)
        return []

    def start(self) -> list:
        """Outbox of the very first round."""
        return self._start_learning()

    # -- learning ------------------------------------------------------
    def _start_learning(self) -> list:
        self.phase = LEARN
        self.lv = 0
        self.det_z = HankelDetector(order=self.n_cells)
        self.det_f = HankelDetector(order=self.n_cells)
        if self.learn_init is not None:
            self.lz, self.lf = self.learn_init
            self.learn_init = None
        else:
            self.lz = float(self.rng.random())
            self.lf = float(self.rng.random())
        self.det_z.observe(self.lz)
        self.det_f.observe(self.lf)
        self.l_done = False
        self.l_F = -1
        self.l_b = -1
        self.l_Fmax = -1
        self.l_Dmax = 0
        self.l_start = None
        self.expect_finals = False
        self.flood_active = False
        self.finals_in = None
        self.bad_final = False
        return self._learn_emit()

    def _learn_emit(self) -> list:
        out = []
        if self.to_zeta:
            out.append(self._msg(ZETA, (self.lz,), self.to_zeta))
        if self.to_flow:
            out.append(self._msg(FLOW, (self.lf,), self.to_flow))
        if self.to_all:
            out.append(self._msg(DMAX, (float(self.l_b), float(self.l_Fmax), float(self.l_Dmax)),
                                 self.to_all))
        return out

    def _learn_step(self, got) -> list:
        self.lv += 1
        v = self.lv
        zin = got.get(ZETA, {})
        fin = got.get(FLOW, {})
        z = self.w
        for j, r, _, _ in self.down:
            z += r * zin[j][0]
        f = self.x0
        for j, r, _, _ in self.up:
            f += r * fin[j][0]
        self.lz, self.lf = z, f
        if self.det_z.status == COLLECTING:
            self.det_z.observe(z)
        if self.det_f.status == COLLECTING:
            self.det_f.observe(f)
        if not self.l_done and self.det_z.status != COLLECTING and self.det_f.status != COLLECTING:
            self.l_done = True
            self.l_F = v
            self.D_zeta = self.det_z.n_observed
            self.D_flow = self.det_f.n_observed
        # l_b is the radius (in hops) around this cell known to be done;
        # it grows by one per round once everything nearby has finished
        Fmax = self.l_F if self.l_done else -1
        Dmax = max(self.D_zeta, self.D_flow) if self.l_done else 0
        radius = self.diam
        for bj, Fj, Dj in got.get(DMAX, {}).values():
            radius = min(radius, int(bj) + 1)
            Fmax = max(Fmax, int(Fj))
            Dmax = max(Dmax, int(Dj))
        self.l_b = radius if self.l_done else -1
        self.l_Fmax, self.l_Dmax = Fmax, Dmax
        if self.l_start is None and self.l_b >= self.diam:
            # every cell finished by Fmax, so every cell detects by Fmax + diam
            self.l_start = Fmax + self.diam + 1
        if self.l_start is not None and v >= self.l_start - 1:
            self._enter_outer()
            return []
        return self._learn_emit()

    def _enter_outer(self):
        self.theta_zeta = self._theta(self.det_z)
        self.theta_flow = self._theta(self.det_f)
        self.D_max = self.l_Dmax
        self.L = max(self.D_max, 1)
        self.U = max(2 * self.L + 1, self.diam + 1)
        self.phase = OUTER
        self.u = 0

    @staticmethod
    def _theta(det) -> tuple:
        if det.status == DEFECTIVE:
            return tuple(float(t) for t in det.coefficients())
        # a failed detector leaves plain iteration: use the latest value
        return (1.0,)

    # -- outer loop ----------------------------------------------------
    def _outer_step(self, got) -> list:
        out = []
        u = self.u
        if FINAL in got:
            self.finals_in = got[FINAL]
            self.expect_finals = False
        if u == 0 and self.finals_in is not None:
            self._close_iteration(self.finals_in or {})
            self.finals_in = None
        if self.flood_active and u > 0:
            V, S = self.flood
            for Vj, Sj in got.get(FLOOD, {}).values():
                V = V or Vj > 0.5
                S = S and Sj > 0.5
            self.flood = (V, S)
        if self.flood_active and u == self.diam:
            self.flood_active = False
            V, S = self.flood
            if V:
                self.relearns += 1
                if not self.confirming:
                    self.eta = self.eta_prev
                    self.iterations = self.iterations_prev
                    if self.eta_trace is not None:
                        del self.eta_trace[self.iterations:]
                self.confirming = False
                return self._start_learning()
            if self.confirming:
                self.phase = DONE
                return []
            if S:
                self.closing = True
        if self.flood_active and u < self.diam:
            out.append(self._msg(FLOOD, (float(self.flood[0]), float(self.flood[1])), self.to_all))
        if self.confirming:
            self.u = u + 1
            return out
        L = self.L
        if u == 0:
            self.zeta_star = self.x_star = self.f_star = None
            z0 = float(self.rng.random())
            self.z_hist = [z0]
            lam, th, _, _, nu, ga = self.eta
            if self.to_eta:
                out.append(self._msg(ETA, (lam, th, nu, ga), self.to_eta))
            if self.to_zeta:
                out.append(self._msg(ZETA, (z0,), self.to_zeta))
        elif u <= L:
            if u == 1:
                self.h = local_h(self, got.get(ETA, {}))
            z = jacobi_zeta_step(self, got.get(ZETA, {}))
            self.z_hist.append(z)
            if u < L:
                if self.to_zeta:
                    out.append(self._msg(ZETA, (z,), self.to_zeta))
            else:
                self.zeta_star = self._finalize(self.theta_zeta, self.z_hist)
                self.x_star = (self.zeta_star - self.b) / (2.0 * self.a)
                f0 = float(self.rng.random())
                self.f_hist = [f0]
                if self.to_flow:
                    out.append(self._msg(FLOW, (f0,), self.to_flow))
        elif u <= 2 * L:
            f = jacobi_flow_step(self, got.get(FLOW, {}))
            self.f_hist.append(f)
            if u < 2 * L:
                if self.to_flow:
                    out.append(self._msg(FLOW, (f,), self.to_flow))
            else:
                self.f_star = self._finalize(self.theta_flow, self.f_hist)
                if self.to_all:
                    out.append(self._msg(FINAL, (self.zeta_star, self.f_star), self.to_all))
                    self.expect_finals = True
                else:
                    self.finals_in = {}
        self.u = 0 if u + 1 == self.U else u + 1
        return out

    def _finalize(self, theta, hist) -> float:
        n = len(theta)
        try:
            return final_value(theta, hist[-n:])
        except DegenerateDenominator:
            self.bad_final = True
            return hist[-1]

    def _close_iteration(self, finals) -> None:
        status = verify_and_recover(self, finals).status
        V = status != "ok"
        if V:
            self.violations.append(self.iterations)
        self.eta_prev = self.eta
        self.iterations_prev = self.iterations
        if self.closing:
            self.confirming = True
            S = True
        elif V:
            S = False
        else:
            new = eta_step(self, finals)
            S = max(abs(a - b) for a, b in zip(new, self.eta)) < self.delta
            self.eta = new
            self.iterations += 1
            if self.eta_trace is not None:
                self.eta_trace.append(new)
        self.last_stop = S
        self.flood = (V, S)
        self.flood_active = True


# ----------------------------------------------------------------------
# local update laws


def local_h(agent: AgentState, eta_in) -> float:
    """Forcing term of the multiplier recursion at this cell.

    ``h_i = lambda_i - theta_i - alpha_i + beta_i
    + sum_{j in N-(i)} (-r_lo_ij lambda_j + r_hi_ij (theta_j + nu_j))
    + v_i sum_{j in I(i)} gamma_j + w_i``.
    """
    lam, th, al, be, _, ga = agent.eta
    h = lam - th - al + be + agent.w
    try:
        for j, _, rlo, rhi in agent.down:
            lj, tj, nj, _ = eta_in[j]
            h += rhi * (tj + nj) - rlo * lj
        g = 0.0
        for j, _ in agent.same:
            g += ga if j == agent.k else eta_in[j][3]
    except KeyError as exc:
        raise MissingNeighborValue(f"agent {agent.k}: no multipliers from {exc.args[0]}") from None
    return h + agent.v * g


def jacobi_zeta_step(agent: AgentState, neighbor_zeta) -> float:
    """``zeta_i <- sum_{j in N-(i)} r_ij zeta_j + h_i``.

    ``neighbor_zeta`` maps each downstream cell to its current value (a
    float or a one-element payload).
    """
    z = agent.h
    try:
        for j, r, _, _ in agent.down:
            val = neighbor_zeta[j]
            z += r * (val[0] if isinstance(val, tuple) else val)
    except KeyError as exc:
        raise MissingNeighborValue(f"agent {agent.k}: no zeta from {exc.args[0]}") from None
    return z


def jacobi_flow_step(agent: AgentState, neighbor_f) -> float:
    """``f_i <- sum_{j in N+(i)} r_ji f_j + x0_i - x*_i``.

    Raises
    ------
    ZetaNotFinalized
        If the agent has no finalized multiplier yet this iteration.
    """
    if agent.x_star is None:
        raise ZetaNotFinalized(f"agent {agent.k}: zeta* not finalized")
    f = agent.x0 - agent.x_star
    try:
        for j, r, _, _ in agent.up:
            val = neighbor_f[j]
            f += r * (val[0] if isinstance(val, tuple) else val)
    except KeyError as exc:
        raise MissingNeighborValue(f"agent {agent.k}: no flow from {exc.args[0]}") from None
    return f


def _neighbor_flow(agent, finals, j):
    if j == agent.k:
        return agent.f_star
    val = finals[j]
    return val[1] if isinstance(val, tuple) else val


def eta_step(agent: AgentState, neighbor_f_star, neighbor_flags=None) -> tuple:
    """Projected update of the six multipliers of this cell.

    ``neighbor_f_star`` maps upstream and same-intersection cells to their
    final flow (or to a ``(zeta*, f*)`` pair). ``neighbor_flags`` is
    accepted for symmetry with the message kinds and ignored.
    """
    fk = agent.f_star
    s_lo = s_hi = 0.0
    try:
        for j, _, rlo, rhi in agent.up:
            fj = _neighbor_flow(agent, neighbor_f_star, j)
            s_lo += rlo * fj
            s_hi += rhi * fj
        g = -agent.T
        for j, vj in agent.same:
            g += vj * _neighbor_flow(agent, neighbor_f_star, j)
    except KeyError as exc:
        raise MissingNeighborValue(f"agent {agent.k}: no final flow from {exc.args[0]}") from None
    grad = (
        fk - s_lo - agent.x_lo,
        s_hi - fk - agent.x_hi,
        -fk,
        fk - agent.f_hi,
        s_hi - agent.s_hi,
        g,
    )
    eps = agent.eps
    return tuple(max(0.0, e + eps * d) for e, d in zip(agent.eta, grad))


class VerifyResult:
    __slots__ = ("status", "outbox", "zeta_gap", "flow_gap")

    def __init__(self, status, outbox, zeta_gap, flow_gap):
        self.status = status
        self.outbox = outbox
        self.zeta_gap = zeta_gap
        self.flow_gap = flow_gap

    def __repr__(self):
        return f"VerifyResult({self.status!r}, zeta_gap={self.zeta_gap:.3g}, flow_gap={self.flow_gap:.3g})"


def verify_and_recover(agent: AgentState, neighbor_finals, tol: float = BALANCE_TOL) -> VerifyResult:
    """Check this cell's two balance equations at the neighbors' final values.

    ``neighbor_finals`` maps neighbor cells to ``(zeta*, f*)``. On a gap
    above ``tol`` (``1e-3 * tol`` relative once values exceed 1000), or on
    a degenerate finalization, the status
    is ``"violation"`` and the outbox holds the notice for the neighbors;
    they restart learning when the notice reaches them.
    """
    zs, fs = agent.zeta_star, agent.f_star
    rz = agent.h
    rf = agent.x0 - agent.x_star
    try:
        for j, r, _, _ in agent.down:
            rz += r * neighbor_finals[j][0]
        for j, r, _, _ in agent.up:
            rf += r * neighbor_finals[j][1]
    except KeyError as exc:
        raise MissingNeighborValue(f"agent {agent.k}: no finals from {exc.args[0]}") from None
    gz = abs(zs - rz)
    gf = abs(fs - rf)
    bad = (agent.bad_final or gz > tol * max(1.0, 1e-3 * abs(zs))
           or gf > tol * max(1.0, 1e-3 * abs(fs)))
    if not bad:
        return VerifyResult("ok", [], gz, gf)
    note = (agent.to_all, Message(agent.k, FLOOD, (1.0, 0.0)))
    return VerifyResult("violation", [note] if agent.to_all else [], gz, gf)


def agent_round(agent: AgentState, inbox) -> tuple:
    """Validate ``inbox`` and advance one round: ``(agent, outbox)``."""
    return agent, agent.step(agent.receive(inbox))
