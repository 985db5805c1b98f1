"""Small problem builders shared by the test modules."""

import numpy as np

from ctmflow.ctm import assemble_problem
from ctmflow.network import build_network, grid_network
from ctmflow.scenarios import GridDefaults, grid_inputs, grid_params


def tandem(length=3, delta_r=0.0):
    """Chain O -> I1 -> ... -> O of ``length`` cells."""
    cells = []
    for k in range(length):
        src = "O" if k == 0 else f"I{k}"
        dst = "O" if k == length - 1 else f"I{k + 1}"
        turns = [] if dst == "O" else [{"to": k + 2, "nominal": 1.0, "lower": 1.0 - delta_r, "upper": 1.0}]
        cells.append({"id": k + 1, "source": src, "sink": dst, "turns": turns})
    return build_network({"cells": cells})


def single_cell():
    return build_network({"cells": [{"id": 1, "source": "O", "sink": "O", "turns": []}]})


def problem(net, q_in=100.0, rho=50.0):
    params = grid_params(net, GridDefaults())
    inputs = grid_inputs(net, params, q_in, rho=np.full(net.n_cells, float(rho)))
    return assemble_problem(net, params, inputs), params


def grid_problem(m=2, n=2, q_in=100.0, rho=50.0):
    return problem(grid_network(m, n), q_in=q_in, rho=rho)
