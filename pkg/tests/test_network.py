import json

import numpy as np
import pytest

from ctmflow.errors import BadRowSum, InconsistentEdge, NetworkError, UnknownCell, UnreachableCell
from ctmflow.network import (
    build_network,
    communication_graph,
    describe,
    graph_diameter,
    grid_network,
    random_network,
    spectral_radius,
    turning_matrices,
    without_cell,
)

from helpers import single_cell, tandem


@pytest.mark.parametrize("m,n,cells", [(1, 1, 8), (2, 2, 24), (2, 5, 54), (5, 5, 120), (5, 10, 230)])
def test_grid_cell_counts(m, n, cells):
    assert grid_network(m, n).n_cells == cells


def test_grid_rows_are_stochastic_with_bounds():
    net = grid_network(2, 2, delta_r=0.05)
    R, R_lo, R_hi, G = turning_matrices(net)
    for k in range(net.n_cells):
        if net.is_destination(k):
            assert R[k].sum() == 0.0
        else:
            assert R[k].sum() == pytest.approx(1.0)
            assert R_lo[k].sum() <= 1.0 <= R_hi[k].sum()
    assert np.all(R_lo <= R) and np.all(R <= R_hi)
    np.testing.assert_allclose(G, np.eye(net.n_cells) - R)


def test_neighbor_sets_are_consistent():
    net = grid_network(2, 2)
    for k in range(net.n_cells):
        for j in net.down[k]:
            assert k in net.up[j]
        if net.same_sink[k]:
            assert k in net.same_sink[k]
            assert all(net.sink[j] == net.sink[k] for j in net.same_sink[k])


def test_description_round_trip(tmp_path):
    net = grid_network(2, 2)
    doc = describe(net)
    path = tmp_path / "net.json"
    path.write_text(json.dumps(doc))
    for source in (doc, json.dumps(doc), path):
        again = build_network(source)
        assert again.ids == net.ids
        np.testing.assert_array_equal(turning_matrices(again)[0], turning_matrices(net)[0])


def test_rejects_bad_row_sum():
    doc = describe(tandem(3))
    doc["cells"][0]["turns"][0]["nominal"] = 0.7
    doc["cells"][0]["turns"][0]["lower"] = 0.6
    with pytest.raises(BadRowSum):
        build_network(doc)


def test_rejects_turn_between_unconnected_cells():
    doc = describe(tandem(3))
    doc["cells"][0]["turns"][0]["to"] = 3
    with pytest.raises(InconsistentEdge):
        build_network(doc)


def test_rejects_unknown_cell():
    doc = describe(tandem(3))
    doc["cells"][0]["turns"][0]["to"] = 99
    with pytest.raises(UnknownCell):
        build_network(doc)


def test_rejects_cell_that_never_leaves():
    doc = {"cells": [
        {"id": 1, "source": "O", "sink": "I1", "turns": [{"to": 2, "nominal": 1.0, "lower": 1.0, "upper": 1.0}]},
        {"id": 2, "source": "I1", "sink": "I2", "turns": [{"to": 3, "nominal": 1.0, "lower": 1.0, "upper": 1.0}]},
        {"id": 3, "source": "I2", "sink": "I1", "turns": [{"to": 2, "nominal": 1.0, "lower": 1.0, "upper": 1.0}]},
    ]}
    with pytest.raises(UnreachableCell):
        build_network(doc)


def test_spectral_radius_of_acyclic_network_is_zero():
    assert spectral_radius(turning_matrices(tandem(30))[0]) == 0.0


def test_spectral_radius_of_grid_below_one():
    for m, n in [(2, 2), (5, 5)]:
        assert spectral_radius(turning_matrices(grid_network(m, n))[0]) < 1.0


def test_communication_graph_and_diameter():
    assert graph_diameter(communication_graph(tandem(5))) == 4
    assert graph_diameter(communication_graph(single_cell())) == 0
    adj = communication_graph(grid_network(2, 2))
    for k, nbrs in adj.items():
        assert k not in nbrs
        assert all(k in adj[j] for j in nbrs)


def test_without_cell_keeps_rows_stochastic():
    net = grid_network(2, 2)
    smaller = without_cell(net, net.ids[10])
    assert smaller.n_cells == net.n_cells - 1
    R = turning_matrices(smaller)[0]
    for k in range(smaller.n_cells):
        assert R[k].sum() == pytest.approx(0.0 if smaller.is_destination(k) else 1.0)


@pytest.mark.parametrize("n", [1, 2, 7, 60, 200])
def test_random_network_is_valid(n):
    net = random_network(np.random.default_rng(n), n)
    assert net.n_cells == n
    assert spectral_radius(turning_matrices(net)[0]) < 1.0


def test_random_network_rejects_empty():
    with pytest.raises(NetworkError):
        random_network(np.random.default_rng(0), 0)
