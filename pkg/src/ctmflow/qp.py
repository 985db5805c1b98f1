"""Per-cycle quadratic program: Lagrangian matrices, KKT residuals, oracle.

The inequality multipliers are stacked per cell as
``(lambda, theta, alpha, beta, nu, gamma)``; ``eta[6*i + k]`` is component
``k`` of cell ``i``. The constraint rows follow the same order:

* ``lambda``: ``f_i - sum_j r_lo[j,i] f_j <= x_lo_i``  (no more outflow than is surely present)
* ``theta``:  ``sum_j r_hi[j,i] f_j - f_i <= x_hi_i``  (no overflow)
* ``alpha``:  ``-f_i <= 0``
* ``beta``:   ``f_i <= f_hi_i``
* ``nu``:     ``sum_j r_hi[j,i] f_j <= s_hi_i``        (supply)
* ``gamma``:  ``sum_{j in I(i)} v_j f_j <= T``         (shared green time)

where ``j`` runs over upstream neighbors of ``i``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .ctm import CellParams, ProblemData
from .errors import Infeasible, LengthMismatch, SingularG

LAMBDA, THETA, ALPHA, BETA, NU, GAMMA = range(6)
COMPONENTS = ("lambda", "theta", "alpha", "beta", "nu", "gamma")


@dataclass
class DualState:
    """Inequality multipliers ``eta`` (length 6N) and equality multipliers ``zeta``."""

    eta: np.ndarray
    zeta: np.ndarray

    @classmethod
    def zeros(cls, n: int) -> "DualState":
        return cls(np.zeros(6 * n), np.zeros(n))

    def blocks(self) -> np.ndarray:
        """View of ``eta`` with one row per cell."""
        return self.eta.reshape(-1, 6)


@dataclass(frozen=True)
class AssembledMatrices:
    """Linear-form data of the dual iteration for one cycle.

    ``f*(eta) = P @ eta + p`` and ``grad Psi(eta) = Q @ f + q``.
    ``delta`` and ``varrho`` are Frobenius norms of ``P`` and ``Q``.
    """

    pd: ProblemData = field(repr=False)
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    w: np.ndarray
    G: np.ndarray
    Ginv: np.ndarray
    H: np.ndarray
    P: np.ndarray
    p: np.ndarray
    Q: np.ndarray
    q: np.ndarray
    delta: float
    varrho: float

    @property
    def n(self) -> int:
        return self.G.shape[0]

    def flows(self, eta) -> np.ndarray:
        return self.P @ eta + self.p

    def volumes(self, f) -> np.ndarray:
        return self.pd.x0 - self.G.T @ f

    def zeta(self, eta) -> np.ndarray:
        return self.Ginv @ (self.H @ eta + self.w)

    def h(self, eta) -> np.ndarray:
        return self.H @ eta + self.w


def cost_vectors(params: Sequence[CellParams]):
    a = np.array([p.a for p in params], float)
    b = np.array([p.b for p in params], float)
    c = np.array([p.c for p in params], float)
    w = np.array([p.w for p in params], float)
    return a, b, c, w


def constraint_matrix(pd: ProblemData):
    """Rows ``Q`` and offsets ``q`` with ``Q f + q <= 0`` the inequality set."""
    net = pd.net
    n = pd.n
    Q = np.zeros((6 * n, n))
    q = np.zeros(6 * n)
    for i in range(n):
        r = 6 * i
        Q[r + LAMBDA, i] += 1.0
        Q[r + THETA, i] -= 1.0
        Q[r + ALPHA, i] = -1.0
        Q[r + BETA, i] = 1.0
        for j in net.up[i]:
            Q[r + LAMBDA, j] -= pd.R_lo[j, i]
            Q[r + THETA, j] += pd.R_hi[j, i]
            Q[r + NU, j] += pd.R_hi[j, i]
        for j in net.same_sink[i]:
            Q[r + GAMMA, j] += pd.v[j]
        q[r + LAMBDA] = -pd.x_lo[i]
        q[r + THETA] = -pd.x_hi[i]
        q[r + BETA] = -pd.f_hi[i]
        q[r + NU] = -pd.s_hi[i]
        q[r + GAMMA] = -pd.T
    return Q, q


def build_matrices(pd: ProblemData, params: Sequence[CellParams]) -> AssembledMatrices:
    """Assemble ``G, H, P, p, Q, q`` for one cycle.

    ``H`` is the transpose of ``Q``: each column of ``H`` holds the
    derivative of the inequality terms of the Lagrangian with respect to one
    flow. The offset is
    ``p = G^-T x0 + 0.5 G^-T A^-1 b - 0.5 G^-T A^-1 G^-1 w``, which is what
    eliminating ``zeta`` and ``x`` from the stationarity conditions gives.
    """
    if len(params) != pd.n:
        raise LengthMismatch(f"{len(params)} parameter records for {pd.n} cells")
    a, b, c, w = cost_vectors(params)
    G = np.eye(pd.n) - pd.R
    try:
        Ginv = np.linalg.inv(G)
    except np.linalg.LinAlgError as exc:
        raise SingularG("I - R is singular; the network violates reachability") from exc
    if not np.allclose(G @ Ginv, np.eye(pd.n), atol=1e-10):
        raise SingularG("I - R is numerically singular")
    Q, q = constraint_matrix(pd)
    H = Q.T.copy()
    Ainv = np.diag(1.0 / a)
    GinvT = Ginv.T
    P = -0.5 * GinvT @ Ainv @ Ginv @ H
    p = GinvT @ pd.x0 + 0.5 * GinvT @ (b / a) - 0.5 * GinvT @ Ainv @ Ginv @ w
    return AssembledMatrices(
        pd=pd, a=a, b=b, c=c, w=w, G=G, Ginv=Ginv, H=H, P=P, p=p, Q=Q, q=q,
        delta=float(np.linalg.norm(P)), varrho=float(np.linalg.norm(Q)),
    )


def objective(params, x, f) -> float:
    """Cycle cost ``sum_i a_i x_i^2 + b_i x_i + c_i + w_i f_i``."""
    x = np.asarray(x, float)
    f = np.asarray(f, float)
    if x.shape != f.shape or x.shape != (len(params),):
        raise LengthMismatch("x, f and params must have the same length")
    a, b, c, w = cost_vectors(params)
    return float(np.sum(a * x * x + b * x + c + w * f))


def objective_in_flows(am: AssembledMatrices, f) -> float:
    """Same cost with the volumes eliminated through ``x = x0 - G^T f``."""
    f = np.asarray(f, float)
    GAGt = am.G @ np.diag(am.a) @ am.G.T
    x0 = am.pd.x0
    lin = -2.0 * am.G @ (am.a * x0) - am.G @ am.b + am.w
    const = x0 @ (am.a * x0) + am.b @ x0 + am.c.sum()
    return float(f @ GAGt @ f + lin @ f + const)


def dual_value(am: AssembledMatrices, eta) -> float:
    """Dual function ``Psi(eta)``: the Lagrangian at its minimizer for fixed ``eta``."""
    f = am.flows(eta)
    x = am.volumes(f)
    phi = float(np.sum(am.a * x * x + am.b * x + am.c + am.w * f))
    return phi + float(eta @ (am.Q @ f + am.q))


@dataclass(frozen=True)
class KKTReport:
    stationarity_x: float
    stationarity_f: float
    primal_eq: float
    primal_ineq_max_violation: float
    dual_min: float
    complementarity_max: float

    def worst(self) -> float:
        """Largest residual, counting a negative ``dual_min`` as a violation."""
        return max(self.stationarity_x, self.stationarity_f, self.primal_eq,
                   self.primal_ineq_max_violation, max(0.0, -self.dual_min),
                   self.complementarity_max)

    def ok(self, tol: float) -> bool:
        return self.worst() < tol

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def kkt_residuals(pd: ProblemData, params, x, f, zeta, eta, am: AssembledMatrices | None = None) -> KKTReport:
    """Evaluate the six blocks of the optimality conditions.

    Pass ``am`` to reuse already assembled matrices.
    """
    if am is None:
        am = build_matrices(pd, params)
    x, f, zeta, eta = (np.asarray(v, float) for v in (x, f, zeta, eta))
    g = am.Q @ f + am.q
    return KKTReport(
        stationarity_x=float(np.max(np.abs(2.0 * am.a * x + am.b - zeta))),
        stationarity_f=float(np.max(np.abs(-am.G @ zeta + am.H @ eta + am.w))),
        primal_eq=float(np.max(np.abs(pd.x0 - am.G.T @ f - x))),
        primal_ineq_max_violation=float(max(0.0, np.max(g))),
        dual_min=float(np.min(eta)),
        complementarity_max=float(np.max(np.abs(eta * g))),
    )


# ---------------------------------------------------------------------------
# independent oracle: primal active-set method on the flow-only QP


@dataclass(frozen=True)
class OracleSolution:
    x: np.ndarray
    f: np.ndarray
    eta: np.ndarray
    zeta: np.ndarray
    iterations: int


def _reduce_rows(C, d, tol):
    """Drop empty rows and merge duplicated ones.

    Returns the kept rows and, for each kept row, the original row index
    that receives its multiplier.
    """
    keep, owner, seen = [], [], {}
    for k in range(C.shape[0]):
        row = C[k]
        if not np.any(np.abs(row) > 0):
            if d[k] < -tol:
                raise Infeasible(f"constraint row {k} reads 0 <= {d[k]}")
            continue
        key = (tuple(np.round(row, 14)), round(float(d[k]), 12))
        if key in seen:
            continue
        seen[key] = k
        keep.append(k)
        owner.append(k)
    return C[keep], d[keep], np.array(owner, dtype=int)


def _active_factor(Linv, C, work):
    """QR factors of ``L^-1 N`` for the active normals ``N`` (columns)."""
    if not work:
        return None, None
    B = Linv @ C[work].T
    Qf, Rf = np.linalg.qr(B)
    return Qf, Rf


def oracle_solve(pd: ProblemData, params, return_multipliers: bool = False, max_iter: int = 10_000):
    """Solve the cycle problem by the dual active-set method of Goldfarb and Idnani.

    Independent of the dual iteration: the volumes are eliminated and the
    strictly convex quadratic in the flows is minimized directly. The
    method starts at the unconstrained minimizer and adds violated
    constraints one at a time while keeping the multipliers dual feasible,
    which makes it immune to the degenerate vertices these problems have.

    Returns
    -------
    (x, f) or OracleSolution
        The optimal volumes and flows; with ``return_multipliers=True`` the
        full solution including recovered multipliers.

    Raises
    ------
    Infeasible
        If the constraint set is empty or the iteration cap is hit.
    """
    am = build_matrices(pd, params)
    n = pd.n
    Hq = 2.0 * am.G @ np.diag(am.a) @ am.G.T
    g0 = -2.0 * am.G @ (am.a * pd.x0) - am.G @ am.b + am.w
    C_all, d_all = am.Q, -am.q
    scale = max(1.0, float(np.abs(d_all).max()))
    C, d, owner = _reduce_rows(C_all, d_all, 1e-11 * scale)
    norms = np.linalg.norm(C, axis=1)
    feas_tol = 1e-10 * scale

    L = np.linalg.cholesky(Hq)
    Linv = np.linalg.solve(L, np.eye(n))
    f = -Linv.T @ (Linv @ g0)
    work: list[int] = []
    u = np.zeros(0)
    it = 0
    while True:
        viol = (C @ f - d) / norms
        if work:
            viol[work] = -np.inf
        p = int(np.argmax(viol))
        if viol[p] <= feas_tol / norms[p]:
            break
        u_p = 0.0
        while True:
            it += 1
            if it > max_iter:
                raise Infeasible(f"dual active-set method did not terminate in {max_iter} iterations")
            Qf, Rf = _active_factor(Linv, C, work)
            y = Linv @ C[p]
            if Qf is None:
                z = Linv.T @ y
                r = np.zeros(0)
            else:
                proj = Qf.T @ y
                z = Linv.T @ (y - Qf @ proj)
                r = np.linalg.solve(Rf, proj)
            # largest dual step keeping the active multipliers non-negative;
            # moving towards feasibility of row p decreases them along r
            t1, drop = np.inf, None
            for j in np.flatnonzero(r > 1e-12 * max(1.0, np.abs(r).max(initial=0.0))):
                tj = u[j] / r[j]
                if tj < t1:
                    t1, drop = tj, j
            zc = float(C[p] @ z)
            if zc <= 1e-14 * norms[p] ** 2 * max(1.0, np.linalg.norm(z)):
                if drop is None:
                    raise Infeasible("constraint set is empty")
                u = u - t1 * r
                u_p += t1
                u = np.delete(u, drop)
                work.pop(drop)
                continue
            t2 = (float(C[p] @ f) - d[p]) / zc
            t = min(t1, t2)
            f = f - t * z
            u = u - t * r
            u_p += t
            if t2 <= t1:
                work.append(p)
                u = np.append(u, u_p)
                break
            u = np.delete(u, drop)
            work.pop(drop)

    eta = np.zeros(6 * n)
    for k, lam in zip(work, u):
        eta[owner[k]] = max(0.0, lam)
    x = pd.x0 - am.G.T @ f
    if not return_multipliers:
        return x, f
    zeta = 2.0 * am.a * x + am.b
    return OracleSolution(x=x, f=f, eta=eta, zeta=zeta, iterations=it)


def write_matrix(path, M) -> None:
    """Dump a matrix as row-major, space-separated text for inspection."""
    M = np.atleast_2d(np.asarray(M, float))
    with open(path, "w") as fh:
        for row in M:
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")


def read_matrix(path) -> np.ndarray:
    with open(path) as fh:
        return np.array([[float(v) for v in line.split()] for line in fh if line.strip()])
