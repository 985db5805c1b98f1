"""Limit of a stable affine recursion from a short stream of one coordinate.

For ``x(l+1) = M x(l) + m`` with spectral radius of ``M`` below one, the
scalar observations ``y(l) = x_r(l)`` have differences ``z(l) = y(l+1) - y(l)``
that are annihilated by the minimal polynomial of the pair ``(M, e_r)``.
The first Hankel matrix of differences that loses rank reveals that
polynomial, and a weighted average of a window of observations then gives
the limit exactly (up to rounding), long before the iteration itself has
converged.

The detector below grows the inverse of the Hankel matrix one border at a
time through its Schur complement, so each new level costs a matrix-vector
product instead of a fresh factorization.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import (
    DegenerateDenominator,
    NoConvergenceDetected,
    NotDefectiveYet,
    ObserveAfterTermination,
)

DEFECT_TOL = 1e-9
# bound on the estimated error of the extrapolated limit, relative to the
# size of the differences, below which the defect is accepted numerically
ACCURACY_TOL = 1e-9
# differences this small relative to the largest one mean the stream has
# already converged to working precision
SETTLED_TOL = 1e-13
DENOM_TOL = 1e-9
# residual of Y @ Z - I beyond which the running inverse is rebuilt
REBUILD_TOL = 1e-6

COLLECTING = "collecting"
DEFECTIVE = "defective"
FAILED = "failed"


def _hankel(z, size: int, offset: int = 0) -> np.ndarray:
    idx = np.arange(size)[:, None] + np.arange(size)[None, :] + offset
    return np.asarray(z, float)[idx]


class HankelDetector:
    """Streaming first-defective-Hankel test on one observation sequence.

    Feed observations with :meth:`observe`. After ``2l + 2`` observations the
    detector knows ``z(0..2l)`` and checks whether the ``(l+1) x (l+1)``
    Hankel matrix ``Z_l`` is singular, using the Schur complement
    ``s = z(2l) - c^T Y c`` where ``Y = Z_{l-1}^{-1}`` and ``c`` is the new
    border column.

    Parameters
    ----------
    tol : float
        Relative defect tolerance. ``|s|`` is compared with
        ``tol * (|z(2l)| + |c|^T |Y c|)``, the magnitude of the terms whose
        cancellation produces it.
    accuracy : float
        Second, numerical acceptance rule. The candidate coefficients
        ``theta = (-Y c, 1)`` leave the residual ``s`` on the newest
        difference, so ``|s| * ||theta||_1 / |sum(theta)|`` estimates the
        error of the extrapolated limit. The defect is accepted once this
        estimate and the change from the previous level's extrapolated limit
        both fall below ``accuracy * max(1, max |z|)``, i.e. when the modes
        not yet resolved can no longer move the limit.
    settled_tol : float
        When the two newest differences fall below
        ``settled_tol * max |z|`` the stream is treated as converged and the
        newest observation is the limit (coefficients ``(1,)``).
    order : int, optional
        Known upper bound on the dimension of the underlying recursion. The
        minimal polynomial cannot have larger degree, so the Hankel matrix
        of size ``order + 1`` is declared defective without testing it.
    max_level : int, optional
        Give up (status ``failed``) once the Hankel size would exceed this.

    Examples
    --------
    >>> d = HankelDetector()
    >>> for y in (0.0, 1.0, 1.5, 1.75):
    ...     _ = d.observe(y)
    >>> d.status, d.coefficients().tolist()
    ('defective', [-0.5, 1.0])
    """

    def __init__(self, tol: float = DEFECT_TOL, max_level: int | None = None,
                 settled_tol: float = SETTLED_TOL, order: int | None = None,
                 accuracy: float = ACCURACY_TOL):
        self.tol = tol
        self.accuracy = accuracy
        self.order = order
        self.settled_tol = settled_tol
        self.settled = False
        self.max_level = max_level
        self.history: list[float] = []
        self.l = 0
        self.Y = np.zeros((0, 0))
        self.c = np.zeros(0)
        self.s = np.nan
        self.status = COLLECTING
        self.rebuilds = 0
        # limit extrapolated from the previous level's candidate coefficients
        self.estimate = np.nan

    # -- bookkeeping -----------------------------------------------------
    @property
    def z(self) -> np.ndarray:
        return np.diff(np.asarray(self.history, float))

    @property
    def n_observed(self) -> int:
        return len(self.history)

    # -- streaming -------------------------------------------------------
    def observe(self, y_next: float) -> "HankelDetector":
        """Append one observation and advance the test if enough data exist."""
        if self.status != COLLECTING:
            raise ObserveAfterTermination(f"detector already {self.status}")
        self.history.append(float(y_next))
        if len(self.history) == 2 * self.l + 2:
            self._check_level()
        return self

    def _check_level(self) -> None:
        z = self.z
        l = self.l
        if l == 0:
            # a vanishing first difference means the sequence is already constant
            if z[0] == 0.0:
                self.s = float(z[0])
                self.c = np.zeros(0)
                self.status = DEFECTIVE
                return
            self.Y = np.array([[1.0 / z[0]]])
            self.s = float(z[0])
            self.l = 1
            return
        c = z[l:2 * l]
        Yc = self.Y @ c
        s = float(z[2 * l] - c @ Yc)
        self.c = c
        self.s = s
        if abs(s) <= self.tol * (abs(z[2 * l]) + np.abs(c) @ np.abs(Yc)):
            self.status = DEFECTIVE
            return
        zmax = float(np.max(np.abs(z)))
        den = 1.0 - Yc.sum()
        estimate = np.nan
        if den != 0.0:
            window = np.asarray(self.history[-(l + 1):], float)
            estimate = float(window[-1] - Yc @ window[:-1]) / den
            err = abs(s) * (1.0 + np.abs(Yc).sum()) / abs(den)
            agree = abs(estimate - self.estimate) if np.isfinite(self.estimate) else np.inf
            thr = self.accuracy * max(1.0, zmax)
            if err <= thr and agree <= thr:
                self.status = DEFECTIVE
                return
        self.estimate = estimate
        if self.order is not None and l >= self.order:
            self.status = DEFECTIVE
            return
        if max(abs(z[-1]), abs(z[-2])) <= self.settled_tol * zmax:
            self.settled = True
            self.status = DEFECTIVE
            return
        if self.max_level is not None and l + 1 > self.max_level:
            self.status = FAILED
            return
        # bordered inverse of Z_l from Y = Z_{l-1}^{-1}
        Y = np.empty((l + 1, l + 1))
        Y[:l, :l] = self.Y + np.outer(Yc, Yc) / s
        Y[:l, l] = -Yc / s
        Y[l, :l] = -Yc / s
        Y[l, l] = 1.0 / s
        Z = _hankel(z, l + 1)
        if np.max(np.abs(Y @ Z - np.eye(l + 1))) > REBUILD_TOL:
            try:
                Y = np.linalg.inv(Z)
            except np.linalg.LinAlgError:
                # numerically singular: treat as the defect
                self.status = DEFECTIVE
                return
            self.rebuilds += 1
        self.Y = Y
        self.l = l + 1

    # -- results ---------------------------------------------------------
    def coefficients(self, refine: bool = True) -> np.ndarray:
        """Annihilating coefficients ``(-Y c, 1)`` of the detected defect.

        With ``refine`` one step of iterative refinement against the stored
        Hankel matrix removes most of the error the running inverse picks up
        when the matrix is badly conditioned.
        """
        if self.status != DEFECTIVE:
            raise NotDefectiveYet(f"detector is {self.status}")
        if self.l == 0 or self.settled:
            return np.ones(1)
        theta = -(self.Y @ self.c)
        if refine:
            Z = _hankel(self.z, self.l)
            try:
                theta = theta + np.linalg.solve(Z, -self.c - Z @ theta)
            except np.linalg.LinAlgError:
                pass
        return np.append(theta, 1.0)

    def window(self) -> np.ndarray:
        """Latest observations matching the coefficient vector in length."""
        k = 1 if self.settled else self.l + 1
        return np.asarray(self.history[-k:], float)

    def dump(self) -> str:
        """Text rendering of the Hankel window collected so far (debugging)."""
        z = self.z
        size = (z.size + 1) // 2
        if size == 0:
            return ""
        H = _hankel(z, size)
        return "\n".join(" ".join(f"{v:.17g}" for v in row) for row in H)


def final_value(theta, y_window, tol: float = DENOM_TOL) -> float:
    """Limit ``sum(theta_j * y_j) / sum(theta_j)`` over a window of observations.

    Raises
    ------
    DegenerateDenominator
        If ``|sum(theta)| <= tol * ||theta||_1``.
    """
    theta = np.asarray(theta, float)
    y_window = np.asarray(y_window, float)
    if theta.shape != y_window.shape:
        raise ValueError(f"window of length {y_window.size} for {theta.size} coefficients")
    den = float(theta.sum())
    if abs(den) <= tol * float(np.abs(theta).sum()):
        raise DegenerateDenominator(f"coefficient sum {den} is numerically zero")
    return float(theta @ y_window) / den


@dataclass
class FinalValueResult:
    y_inf: float
    theta: np.ndarray
    D: int
    attempts: int = 1


def _as_apply(M) -> Callable:
    if callable(M):
        return M
    M = np.asarray(M, float)
    return lambda x: M @ x


def run_to_final(recursion, r: int, x0, tol: float = DEFECT_TOL, max_obs: int | None = None,
                 rng: np.random.Generator | None = None, max_attempts: int = 5) -> FinalValueResult:
    """Iterate ``x <- M x + m`` and return the limit of coordinate ``r``.

    Parameters
    ----------
    recursion : tuple
        ``(M, m)`` where ``M`` is a square matrix or a callable applying it.
    r : int
        Observed coordinate.
    x0 : array_like
        Initial state.
    max_obs : int, optional
        Observation cap per attempt, default ``2 * n + 4``.
    rng : numpy.random.Generator, optional
        Source of the fresh initial states used after a degenerate attempt.
        Without it a degenerate attempt is an error.
    max_attempts : int

    Returns
    -------
    FinalValueResult
        ``D`` counts the observations of the successful attempt.

    Raises
    ------
    NoConvergenceDetected
        No defect within the cap on every attempt.
    """
    M, m = recursion
    apply = _as_apply(M)
    m = np.asarray(m, float)
    x = np.array(x0, dtype=float)
    n = x.size
    cap = 2 * n + 4 if max_obs is None else max_obs
    last_err: Exception | None = None
    for attempt in range(1, max_attempts + 1):
        det = HankelDetector(tol=tol, order=n)
        xk = x.copy()
        det.observe(xk[r])
        while det.status == COLLECTING and det.n_observed < cap:
            xk = apply(xk) + m
            det.observe(xk[r])
        if det.status == DEFECTIVE:
            try:
                theta = det.coefficients()
                y = final_value(theta, det.window())
                return FinalValueResult(y, theta, det.n_observed, attempt)
            except DegenerateDenominator as exc:
                last_err = exc
        else:
            last_err = NoConvergenceDetected(
                f"no defective Hankel matrix within {cap} observations")
        if rng is None:
            break
        x = x + rng.uniform(0.0, 1.0, size=n)
    if isinstance(last_err, NoConvergenceDetected):
        raise last_err
    raise NoConvergenceDetected(str(last_err))


def learn_coefficients(recursion, x0, tol: float = DEFECT_TOL, max_obs: int | None = None):
    """Run one recursion and detect every coordinate's coefficients at once.

    Returns
    -------
    thetas : list of ndarray
    D : ndarray of int
        Observations each coordinate needed.
    """
    M, m = recursion
    apply = _as_apply(M)
    x = np.array(x0, dtype=float)
    n = x.size
    cap = 2 * n + 4 if max_obs is None else max_obs
    dets = [HankelDetector(tol=tol, order=n) for _ in range(n)]
    for i, d in enumerate(dets):
        d.observe(x[i])
    for _ in range(cap - 1):
        if all(d.status != COLLECTING for d in dets):
            break
        x = apply(x) + m
        for i, d in enumerate(dets):
            if d.status == COLLECTING:
                d.observe(x[i])
    bad = [i for i, d in enumerate(dets) if d.status != DEFECTIVE]
    if bad:
        raise NoConvergenceDetected(f"coordinates {bad} found no defect within {cap} observations")
    return [d.coefficients() for d in dets], np.array([d.n_observed for d in dets])
