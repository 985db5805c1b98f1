"""Traffic-flow control on Cell Transmission Model networks.

Each signal cycle poses a convex quadratic program over the cell outflows.
It is solved centrally by projected dual gradient ascent, or by one agent
per cell that only talks to adjacent cells and shortens its inner linear
solves with a Hankel-matrix final-value detector.
"""

__version__ = "0.1.0"

from .errors import *  # noqa: F401,F403
from .network import Network, build_network, grid_network, random_network, spectral_radius
from .ctm import CellParams, CycleInputs, ProblemData, TrapezoidFD, assemble_problem, step_dynamics
from .qp import AssembledMatrices, build_matrices, kkt_residuals, oracle_solve
from .centralized import SolveReport, solve, step_size
from .final_value import HankelDetector, final_value, run_to_final

__all__ = [
    "Network", "build_network", "grid_network", "random_network", "spectral_radius",
    "CellParams", "CycleInputs", "ProblemData", "TrapezoidFD", "assemble_problem", "step_dynamics",
    "AssembledMatrices", "build_matrices", "kkt_residuals", "oracle_solve",
    "SolveReport", "solve", "step_size",
    "HankelDetector", "final_value", "run_to_final",
]
