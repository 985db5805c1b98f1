"""Dual gradient projection for one cycle (the centralized solver)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateNorms, LengthMismatch, MaxIterExceeded
from .qp import AssembledMatrices, KKTReport, kkt_residuals

DEFAULT_SAFETY = 0.5
DEFAULT_MAX_ITER = 50_000


@dataclass
class SolveReport:
    f_opt: np.ndarray
    eta_final: np.ndarray
    iterations: int
    final_step_norm: float
    kkt: KKTReport
    converged: bool = True
    step_norms: list = field(default_factory=list, repr=False)
    eta_trace: list = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return {
            "f_opt": self.f_opt.tolist(),
            "eta_final": self.eta_final.tolist(),
            "iterations": self.iterations,
            "final_step_norm": self.final_step_norm,
            "converged": self.converged,
            "kkt": self.kkt.as_dict(),
        }


def step_size(am: AssembledMatrices, safety: float = DEFAULT_SAFETY, fallback: float = 1.0) -> float:
    """``safety * 2 / (varrho * delta)``.

    ``safety`` must lie in (0, 1) so the step stays strictly below the
    Lipschitz bound. When ``varrho * delta`` vanishes the dual gradient is
    constant and ``fallback`` is returned.
    """
    if not 0.0 < safety < 1.0:
        raise ValueError(f"safety factor must lie in (0, 1), got {safety}")
    prod = am.varrho * am.delta
    if prod == 0.0:
        return fallback
    if not np.isfinite(prod):
        raise DegenerateNorms(f"non-finite norm product {prod}")
    return safety * 2.0 / prod


def dual_gradient(am: AssembledMatrices, f_star) -> np.ndarray:
    """Gradient of the dual function, ``Q f* + q``."""
    f_star = np.asarray(f_star, float)
    if f_star.shape != (am.n,):
        raise LengthMismatch(f"expected {am.n} flows, got shape {f_star.shape}")
    return am.Q @ f_star + am.q


def default_delta(am: AssembledMatrices) -> float:
    return 1e-8 * (1.0 + float(np.linalg.norm(am.q)))


def solve(am: AssembledMatrices, eps: float | None = None, delta: float | None = None,
          max_iter: int = DEFAULT_MAX_ITER, eta0=None, trace: bool = False,
          raise_on_cap: bool = False) -> SolveReport:
    """Projected dual ascent from ``eta = 0`` until ``||eta(k+1) - eta(k)|| < delta``.

    Each iteration computes ``f = P eta + p`` and then
    ``eta = max(0, eta + eps * (Q f + q))``.

    Parameters
    ----------
    am : AssembledMatrices
    eps : float, optional
        Step size; defaults to :func:`step_size` with safety 0.5.
    delta : float, optional
        Stopping threshold; defaults to ``1e-8 * (1 + ||q||)``.
    max_iter : int
    eta0 : array_like, optional
        Warm start (the method itself starts from zero).
    trace : bool
        Keep every step norm and iterate on the report.
    raise_on_cap : bool
        Raise :class:`MaxIterExceeded` instead of returning an unconverged
        report.
    """
    if eps is None:
        eps = step_size(am)
    if delta is None:
        delta = default_delta(am)
    if delta <= 0:
        raise ValueError("delta must be positive")
    eta = np.zeros(6 * am.n) if eta0 is None else np.maximum(np.asarray(eta0, float), 0.0)
    P, p, Q, q = am.P, am.p, am.Q, am.q
    steps, etas = [], []
    if trace:
        etas.append(eta.copy())
    converged = False
    step = np.inf
    f = P @ eta + p
    it = 0
    for it in range(1, max_iter + 1):
        f = P @ eta + p
        new = np.maximum(0.0, eta + eps * (Q @ f + q))
        step = float(np.linalg.norm(new - eta))
        eta = new
        if trace:
            steps.append(step)
            etas.append(eta.copy())
        if step < delta:
            converged = True
            break
    # the returned flow is the one the final multipliers produce
    f = P @ eta + p
    x = am.volumes(f)
    zeta = am.zeta(eta)
    report = SolveReport(
        f_opt=f,
        eta_final=eta,
        iterations=it,
        final_step_norm=step,
        kkt=kkt_residuals(am.pd, None, x, f, zeta, eta, am=am),
        converged=converged,
        step_norms=steps,
        eta_trace=etas,
    )
    if not converged and raise_on_cap:
        raise MaxIterExceeded(f"no convergence within {max_iter} iterations", report=report)
    return report
