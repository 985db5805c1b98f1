"""Cell Transmission Model dynamics and per-cycle problem constants."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import (
    CTMFlowError,
    InfeasibleBounds,
    LengthMismatch,
    NegativeResultingVolume,
    NegativeVolume,
)
from .network import Network, turning_matrices

ROW_TOL = 1e-9


@dataclass(frozen=True)
class TrapezoidFD:
    """Piecewise-linear demand/supply pair.

    ``d(rho) = min(free_speed * rho, d_max)`` and
    ``s(rho) = max(0, min(s_max, wave_speed * (rho_cg - rho)))``.
    """

    free_speed: float
    d_max: float
    s_max: float
    wave_speed: float
    rho_cg: float

    @classmethod
    def balanced(cls, rho_cr: float, rho_cg: float, capacity: float) -> "TrapezoidFD":
        """Trapezoid whose demand and supply both equal ``capacity`` at ``rho_cr``."""
        if not 0.0 < rho_cr < rho_cg:
            raise ValueError("need 0 < rho_cr < rho_cg")
        return cls(capacity / rho_cr, capacity, capacity, capacity / (rho_cg - rho_cr), rho_cg)

    def demand(self, rho):
        return np.minimum(self.free_speed * rho, self.d_max)

    def supply(self, rho):
        return np.clip(self.wave_speed * (self.rho_cg - rho), 0.0, self.s_max)

    def to_dict(self) -> dict:
        return {"kind": "trapezoid", "free_speed": self.free_speed, "d_max": self.d_max,
                "s_max": self.s_max, "wave_speed": self.wave_speed, "rho_cg": self.rho_cg}


@dataclass(frozen=True)
class CellParams:
    """Physical and cost parameters of one road cell.

    Volumes are in vehicles, ``omega`` in seconds per vehicle. The cost of a
    cell at the end of the cycle is ``a*x**2 + b*x + c + w*f``.
    """

    rho_cg: float
    rho_cr: float
    omega: float
    fd: TrapezoidFD
    a: float
    b: float = 0.0
    c: float = 0.0
    w: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.rho_cr < self.rho_cg:
            raise ValueError(f"need 0 < rho_cr < rho_cg, got {self.rho_cr}, {self.rho_cg}")
        if self.a <= 0.0:
            raise ValueError(f"cost coefficient a must be positive, got {self.a}")
        if self.omega <= 0.0:
            raise ValueError(f"service time omega must be positive, got {self.omega}")

    def to_dict(self) -> dict:
        return {"rho_cg": self.rho_cg, "rho_cr": self.rho_cr, "omega": self.omega,
                "a": self.a, "b": self.b, "c": self.c, "w": self.w, "fd": self.fd.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "CellParams":
        fd = d["fd"]
        if fd.get("kind", "trapezoid") != "trapezoid":
            raise ValueError(f"unsupported demand/supply kind {fd.get('kind')!r}")
        fd = TrapezoidFD(fd["free_speed"], fd["d_max"], fd["s_max"], fd["wave_speed"],
                         fd["rho_cg"])
        return cls(d["rho_cg"], d["rho_cr"], d["omega"], fd, d["a"], d.get("b", 0.0),
                   d.get("c", 0.0), d.get("w", 0.0))


def demand(p: CellParams, rho: float) -> float:
    """Upper bound on the flow a cell can send when holding ``rho`` vehicles."""
    if rho < 0:
        raise NegativeVolume(f"volume must be non-negative, got {rho}")
    return float(p.fd.demand(rho))


def supply(p: CellParams, rho: float) -> float:
    """Upper bound on the flow a cell can receive when holding ``rho`` vehicles."""
    if rho < 0:
        raise NegativeVolume(f"volume must be non-negative, got {rho}")
    return float(p.fd.supply(rho))


@dataclass(frozen=True)
class CycleInputs:
    """Cell volumes at the start of a cycle and the exogenous inflow estimate.

    ``mu``, ``mu_lo`` and ``mu_hi`` are the nominal, lower and upper inflow
    over the cycle; they must vanish on cells that do not start at the
    exterior node.
    """

    rho: np.ndarray
    mu: np.ndarray
    mu_lo: np.ndarray
    mu_hi: np.ndarray
    T: float

    def to_dict(self) -> dict:
        return {"rho": list(map(float, self.rho)), "mu": list(map(float, self.mu)),
                "mu_lo": list(map(float, self.mu_lo)), "mu_hi": list(map(float, self.mu_hi)),
                "T": float(self.T)}

    @classmethod
    def from_dict(cls, d: dict) -> "CycleInputs":
        return cls(np.asarray(d["rho"], float), np.asarray(d["mu"], float),
                   np.asarray(d["mu_lo"], float), np.asarray(d["mu_hi"], float), float(d["T"]))


@dataclass(frozen=True)
class ProblemData:
    """Constants of one cycle's flow problem, one entry per cell.

    ``x0`` nominal volume before outflow, ``x_lo`` the volume guaranteed to
    be present, ``x_hi`` the room left below congestion under the largest
    inflow, ``f_hi`` the outflow cap, ``s_hi`` the supply, ``v`` the green
    time consumed per departing vehicle.
    """

    net: Network = field(repr=False)
    x0: np.ndarray
    x_lo: np.ndarray
    x_hi: np.ndarray
    f_hi: np.ndarray
    s_hi: np.ndarray
    v: np.ndarray
    T: float
    R: np.ndarray = field(repr=False)
    R_lo: np.ndarray = field(repr=False)
    R_hi: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return self.x0.size


def service_times(net: Network, params: Sequence[CellParams]) -> np.ndarray:
    """Green seconds consumed per departing vehicle, ``max_j r*_ij * omega_i``.

    Destination cells have no movement; they use ``omega_i`` directly.
    """
    v = np.empty(net.n_cells)
    for k in range(net.n_cells):
        ratios = [net.turning[(k, l)].nominal for l in net.down[k]]
        v[k] = params[k].omega * (max(ratios) if ratios else 1.0)
    return v


def check_inputs(net: Network, params: Sequence[CellParams], inputs: CycleInputs) -> None:
    n = net.n_cells
    if len(params) != n:
        raise LengthMismatch(f"{len(params)} parameter records for {n} cells")
    for name in ("rho", "mu", "mu_lo", "mu_hi"):
        if np.shape(getattr(inputs, name)) != (n,):
            raise LengthMismatch(f"inputs.{name} must have length {n}")
    rho_cg = np.array([p.rho_cg for p in params])
    if np.any(inputs.rho < 0) or np.any(inputs.rho > rho_cg * (1 + 1e-12)):
        raise CTMFlowError("cell volumes must lie in [0, rho_cg]")
    if np.any(inputs.mu_lo > inputs.mu + 1e-12) or np.any(inputs.mu > inputs.mu_hi + 1e-12):
        raise CTMFlowError("inflow estimates must satisfy mu_lo <= mu <= mu_hi")
    if np.any(inputs.mu_lo < 0):
        raise CTMFlowError("inflow must be non-negative")
    inner = np.array([not net.is_source(k) for k in range(n)])
    if np.any(inputs.mu_hi[inner] != 0):
        raise CTMFlowError("exogenous inflow on a cell that does not start at the exterior")
    if inputs.T <= 0:
        raise CTMFlowError("cycle time must be positive")


def assemble_problem(net: Network, params: Sequence[CellParams], inputs: CycleInputs) -> ProblemData:
    """Per-cycle constants of the flow problem.

    Raises
    ------
    InfeasibleBounds
        If some cell would overflow even with zero outflow and the largest
        inflow (``rho + mu_hi > rho_cg``).
    """
    check_inputs(net, params, inputs)
    rho = np.asarray(inputs.rho, float)
    rho_cg = np.array([p.rho_cg for p in params])
    x_hi = rho_cg - rho - inputs.mu_hi
    if np.any(x_hi < 0):
        bad = [net.ids[k] for k in np.flatnonzero(x_hi < 0)]
        raise InfeasibleBounds(f"guaranteed overflow on cells {bad}")
    v = service_times(net, params)
    d = np.array([p.fd.demand(r) for p, r in zip(params, rho)], dtype=float)
    s = np.array([p.fd.supply(r) for p, r in zip(params, rho)], dtype=float)
    R, R_lo, R_hi, _ = turning_matrices(net)
    return ProblemData(
        net=net,
        x0=rho + inputs.mu,
        x_lo=rho + inputs.mu_lo,
        x_hi=x_hi,
        f_hi=np.minimum(d, inputs.T / v),
        s_hi=s,
        v=v,
        T=float(inputs.T),
        R=R,
        R_lo=R_lo,
        R_hi=R_hi,
    )


def step_dynamics(net: Network, rho, f, realized_r, realized_mu, tol: float = 1e-9) -> np.ndarray:
    """Advance volumes by one cycle: ``rho + mu - (I - R)^T f``.

    Raises
    ------
    NegativeResultingVolume
        If some resulting volume is below ``-tol``. The raw result is
        attached to the exception.
    """
    rho = np.asarray(rho, float)
    f = np.asarray(f, float)
    R = np.asarray(realized_r, float)
    mu = np.asarray(realized_mu, float)
    n = net.n_cells
    if rho.shape != (n,) or f.shape != (n,) or mu.shape != (n,) or R.shape != (n, n):
        raise LengthMismatch("dimension mismatch in step_dynamics")
    if np.any(f < -tol):
        raise ValueError("flows must be non-negative")
    sums = R.sum(axis=1)
    for k in range(n):
        expected = 0.0 if net.is_destination(k) else 1.0
        if abs(sums[k] - expected) > ROW_TOL:
            raise ValueError(f"realized ratios of cell {net.ids[k]!r} sum to {sums[k]}")
    out = rho + mu - f + R.T @ f
    if np.any(out < -tol):
        bad = [net.ids[k] for k in np.flatnonzero(out < -tol)]
        raise NegativeResultingVolume(f"negative volume on cells {bad}", volumes=out)
    return out
