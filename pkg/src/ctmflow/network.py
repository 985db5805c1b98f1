"""Physical road-cell graph, turning ratios and neighbor queries.

A network is a set of directed road cells. Each cell runs from a source
node to a sink node; nodes are named intersections or the exterior node
``"O"``. Permitted movements are the turning entries ``(i, j)``: flow leaving
cell ``i`` through its sink may enter cell ``j``. Downstream and upstream
neighbor sets are read off the turning entries, so movements that share a
node but are not permitted (U-turns in a grid) are simply absent.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .errors import (
    BadDimensions,
    BadRowSum,
    InconsistentEdge,
    NetworkError,
    NonSquare,
    UnknownCell,
    UnreachableCell,
)

OUTSIDE = "O"
DOCUMENT_FORMAT = "ctmflow-network/1"
ROW_SUM_TOL = 1e-9


@dataclass(frozen=True)
class Turn:
    """Nominal, lower and upper split ratio of one permitted movement."""

    nominal: float
    lower: float
    upper: float


@dataclass(frozen=True)
class Network:
    """Validated, immutable road-cell network.

    Use :func:`build_network` or :func:`grid_network` to construct one; the
    constructor itself does not validate.

    Attributes
    ----------
    ids : tuple of int
        External cell identifiers, in description order. Matrix row ``k``
        corresponds to ``ids[k]``.
    source, sink : tuple of str
        Source and sink node of every cell.
    intersections : tuple of str
        Internal nodes (the exterior node ``"O"`` is not listed).
    turning : mapping
        ``(k, l) -> Turn`` keyed by matrix indices.
    """

    ids: tuple
    source: tuple
    sink: tuple
    intersections: tuple
    turning: Mapping
    _index: dict = field(init=False, repr=False, compare=False)
    down: tuple = field(init=False, repr=False, compare=False)
    up: tuple = field(init=False, repr=False, compare=False)
    same_sink: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        n = len(self.ids)
        down = [[] for _ in range(n)]
        up = [[] for _ in range(n)]
        for (k, l) in sorted(self.turning):
            down[k].append(l)
            up[l].append(k)
        by_sink = {}
        for k, node in enumerate(self.sink):
            if node != OUTSIDE:
                by_sink.setdefault(node, []).append(k)
        same = tuple(
            tuple(by_sink[self.sink[k]]) if self.sink[k] != OUTSIDE else ()
            for k in range(n)
        )
        object.__setattr__(self, "_index", {c: k for k, c in enumerate(self.ids)})
        object.__setattr__(self, "down", tuple(tuple(d) for d in down))
        object.__setattr__(self, "up", tuple(tuple(u) for u in up))
        object.__setattr__(self, "same_sink", same)

    @property
    def n_cells(self) -> int:
        return len(self.ids)

    def index(self, cell) -> int:
        """Matrix index of an external cell id."""
        try:
            return self._index[cell]
        except KeyError:
            raise UnknownCell(f"unknown cell {cell!r}") from None

    def is_source(self, k: int) -> bool:
        return self.source[k] == OUTSIDE

    def is_destination(self, k: int) -> bool:
        return self.sink[k] == OUTSIDE

    def comm_neighbors(self, k: int) -> tuple:
        """Indices a cell may exchange messages with (excluding itself)."""
        nb = set(self.down[k]) | set(self.up[k]) | set(self.same_sink[k])
        nb.discard(k)
        return tuple(sorted(nb))


# ---------------------------------------------------------------------------
# construction


def build_network(description) -> Network:
    """Build and validate a network from a description document.

    Parameters
    ----------
    description : dict, str or Path
        Parsed document, a JSON string, or a path to a JSON file. The layout
        is::

            {"format": "ctmflow-network/1",
             "intersections": ["I1", ...],          # optional
             "cells": [{"id": 1, "source": "O", "sink": "I1",
                        "turns": [{"to": 5, "nominal": 0.4,
                                   "lower": 0.38, "upper": 0.42}, ...]},
                       ...]}

    Returns
    -------
    Network

    Raises
    ------
    InconsistentEdge
        A turning entry joins cells that do not meet at a common node, or a
        destination cell lists movements.
    BadRowSum
        Ratios outside ``0 <= lower <= nominal <= upper <= 1`` or a row whose
        sums violate ``sum(lower) <= 1 = sum(nominal) <= sum(upper)``.
    UnreachableCell
        Some cell is not reachable from a source cell or cannot reach a
        destination cell.
    """
    doc = _load_document(description)
    cells = doc.get("cells")
    if not cells:
        raise NetworkError("description lists no cells")

    ids = tuple(c["id"] for c in cells)
    if len(set(ids)) != len(ids):
        raise NetworkError("duplicate cell ids")
    index = {c: k for k, c in enumerate(ids)}
    source = tuple(str(c["source"]) for c in cells)
    sink = tuple(str(c["sink"]) for c in cells)

    nodes = set(source) | set(sink)
    nodes.discard(OUTSIDE)
    if "intersections" in doc:
        declared = tuple(str(x) for x in doc["intersections"])
        unknown = nodes - set(declared)
        if unknown:
            raise NetworkError(f"undeclared nodes: {sorted(unknown)}")
        intersections = declared
    else:
        intersections = tuple(sorted(nodes))

    turning = {}
    for k, c in enumerate(cells):
        for t in c.get("turns", ()):
            if t["to"] not in index:
                raise UnknownCell(f"turn from {ids[k]!r} to unknown cell {t['to']!r}")
            l = index[t["to"]]
            nominal = float(t["nominal"])
            lower = float(t.get("lower", nominal))
            upper = float(t.get("upper", nominal))
            turning[(k, l)] = Turn(nominal, lower, upper)

    net = Network(ids, source, sink, intersections, turning)
    validate(net)
    return net


def validate(net: Network) -> None:
    """Check movement consistency, ratio bounds, row sums and reachability."""
    n = net.n_cells
    for (k, l), t in net.turning.items():
        if net.sink[k] == OUTSIDE:
            raise InconsistentEdge(f"destination cell {net.ids[k]!r} lists a movement")
        if net.sink[k] != net.source[l]:
            raise InconsistentEdge(
                f"movement {net.ids[k]!r}->{net.ids[l]!r} does not share a node"
            )
        if k == l:
            raise InconsistentEdge(f"self movement on cell {net.ids[k]!r}")
        if not (0.0 <= t.lower <= t.nominal <= t.upper <= 1.0):
            raise BadRowSum(
                f"ratio bounds of {net.ids[k]!r}->{net.ids[l]!r} not ordered in [0, 1]"
            )

    for k in range(n):
        if net.sink[k] == OUTSIDE:
            continue
        row = [net.turning[(k, l)] for l in net.down[k]]
        if not row:
            raise BadRowSum(f"cell {net.ids[k]!r} ends at an intersection but has no movement")
        s_nom = sum(t.nominal for t in row)
        s_lo = sum(t.lower for t in row)
        s_hi = sum(t.upper for t in row)
        if abs(s_nom - 1.0) > ROW_SUM_TOL:
            raise BadRowSum(f"nominal ratios of cell {net.ids[k]!r} sum to {s_nom}")
        if s_lo > 1.0 + ROW_SUM_TOL or s_hi < 1.0 - ROW_SUM_TOL:
            raise BadRowSum(f"ratio bounds of cell {net.ids[k]!r} do not bracket 1")

    _check_reachability(net)


def _check_reachability(net: Network) -> None:
    n = net.n_cells
    fwd = _bfs([k for k in range(n) if net.is_source(k)], net.down)
    missing = [net.ids[k] for k in range(n) if not fwd[k]]
    if missing:
        raise UnreachableCell(f"cells not reachable from any source cell: {missing}")
    bwd = _bfs([k for k in range(n) if net.is_destination(k)], net.up)
    missing = [net.ids[k] for k in range(n) if not bwd[k]]
    if missing:
        raise UnreachableCell(f"cells that cannot reach a destination cell: {missing}")


def _bfs(starts, adjacency):
    seen = [False] * len(adjacency)
    queue = deque(starts)
    for s in starts:
        seen[s] = True
    while queue:
        k = queue.popleft()
        for l in adjacency[k]:
            if not seen[l]:
                seen[l] = True
                queue.append(l)
    return seen


def _load_document(description):
    if isinstance(description, Mapping):
        return description
    if isinstance(description, Path):
        return json.loads(description.read_text())
    if isinstance(description, str):
        text = description.lstrip()
        if text.startswith("{"):
            return json.loads(text)
        return json.loads(Path(description).read_text())
    raise TypeError(f"cannot read a network description from {type(description)}")


def describe(net: Network) -> dict:
    """Inverse of :func:`build_network`: the description document of ``net``."""
    cells = []
    for k in range(net.n_cells):
        turns = []
        for l in net.down[k]:
            t = net.turning[(k, l)]
            turns.append(
                {"to": net.ids[l], "nominal": t.nominal, "lower": t.lower, "upper": t.upper}
            )
        cells.append(
            {"id": net.ids[k], "source": net.source[k], "sink": net.sink[k], "turns": turns}
        )
    return {
        "format": DOCUMENT_FORMAT,
        "intersections": list(net.intersections),
        "cells": cells,
    }


# ---------------------------------------------------------------------------
# queries


def neighbor_sets(net: Network, cell):
    """Downstream, upstream and same-intersection sets of a cell.

    Parameters
    ----------
    net : Network
    cell
        External cell id.

    Returns
    -------
    down, up, same : set
        External ids. ``same`` contains ``cell`` itself unless the cell
        drains to the exterior, in which case it is empty.
    """
    k = net.index(cell)
    ids = net.ids
    return (
        {ids[l] for l in net.down[k]},
        {ids[l] for l in net.up[k]},
        {ids[l] for l in net.same_sink[k]},
    )


def turning_matrices(net: Network):
    """Dense nominal, lower and upper turning matrices and ``G = I - R*``."""
    n = net.n_cells
    R = np.zeros((n, n))
    R_lo = np.zeros((n, n))
    R_hi = np.zeros((n, n))
    for (k, l), t in net.turning.items():
        R[k, l] = t.nominal
        R_lo[k, l] = t.lower
        R_hi[k, l] = t.upper
    return R, R_lo, R_hi, np.eye(n) - R


def spectral_radius(M) -> float:
    """Largest eigenvalue modulus of a square matrix.

    The matrix is split into the strongly connected components of its
    nonzero pattern; the spectrum is the union of the spectra of the
    diagonal blocks. This keeps acyclic (nilpotent) parts exact, where a
    dense eigensolve of a long Jordan chain would return visibly nonzero
    values.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise NonSquare(f"expected a square matrix, got shape {M.shape}")
    n = M.shape[0]
    if n == 0:
        return 0.0
    n_comp, labels = connected_components(csr_matrix(M != 0), directed=True, connection="strong")
    radius = 0.0
    for c in range(n_comp):
        idx = np.flatnonzero(labels == c)
        block = M[np.ix_(idx, idx)]
        if idx.size == 1:
            radius = max(radius, abs(block[0, 0]))
        else:
            radius = max(radius, float(np.max(np.abs(np.linalg.eigvals(block)))))
    return float(radius)


def communication_graph(net: Network) -> dict:
    """Undirected message graph: index -> set of neighbor indices."""
    return {k: set(net.comm_neighbors(k)) for k in range(net.n_cells)}


def graph_diameter(adjacency: Mapping) -> int:
    """Largest finite hop distance in an undirected graph (0 for one node)."""
    best = 0
    for s in adjacency:
        dist = {s: 0}
        queue = deque([s])
        while queue:
            u = queue.popleft()
            for v in adjacency[u]:
                if v not in dist:
                    dist[v] = dist[u] + 1
                    queue.append(v)
        best = max(best, max(dist.values()))
    return best


def without_cell(net: Network, cell) -> Network:
    """Network with one cell closed: movements into it get ratio zero.

    The remaining ratios of each affected row are rescaled to sum to one;
    rows left without any movement make their cell a destination. The
    closed cell itself is removed.
    """
    gone = net.index(cell)
    keep = [k for k in range(net.n_cells) if k != gone]
    doc = describe(net)
    cells = []
    for k in keep:
        c = dict(doc["cells"][k])
        turns = [t for t in c["turns"] if t["to"] != cell]
        if c["turns"] and len(turns) != len(c["turns"]):
            total = sum(t["nominal"] for t in turns)
            if total <= 0.0:
                raise NetworkError(f"closing {cell!r} strands cell {c['id']!r}")
            turns = [
                {
                    "to": t["to"],
                    "nominal": t["nominal"] / total,
                    "lower": min(t["lower"] / total, t["nominal"] / total),
                    "upper": min(1.0, max(t["upper"] / total, t["nominal"] / total)),
                }
                for t in turns
            ]
        c["turns"] = turns
        cells.append(c)
    doc["cells"] = cells
    return build_network(doc)


# ---------------------------------------------------------------------------
# generators


def grid_network(m: int, n: int, delta_r: float = 0.05) -> Network:
    """Grid of ``m`` rows by ``n`` columns of intersections.

    Every intersection has four incoming and four outgoing cells; boundary
    cells connect to the exterior. Cells are numbered from 1 in the order of
    the standard 2x2 layout: north boundary pairs, then for each row the
    westbound lane, the eastbound lane and the vertical pairs below it, and
    finally the south boundary pairs. U-turns are not permitted, so each
    cell entering an intersection has three downstream cells with uniform
    nominal split 1/3. Bounds are ``nominal * (1 -/+ delta_r)`` clipped to
    ``[0, 1]``.
    """
    if m < 1 or n < 1:
        raise BadDimensions(f"grid needs m, n >= 1, got {m}x{n}")
    if not 0.0 <= delta_r < 1.0:
        raise BadDimensions(f"delta_r must lie in [0, 1), got {delta_r}")

    def node(r, c):
        return f"I{(r - 1) * n + c}"

    spans = []  # (source, sink, segment)
    for c in range(1, n + 1):
        spans.append((OUTSIDE, node(1, c), ("v", 0, c)))
        spans.append((node(1, c), OUTSIDE, ("v", 0, c)))
    for r in range(1, m + 1):
        for k in range(n + 1):  # westbound
            src = OUTSIDE if k == n else node(r, k + 1)
            dst = OUTSIDE if k == 0 else node(r, k)
            spans.append((src, dst, ("h", r, k)))
        for k in range(n + 1):  # eastbound
            src = OUTSIDE if k == 0 else node(r, k)
            dst = OUTSIDE if k == n else node(r, k + 1)
            spans.append((src, dst, ("h", r, k)))
        if r < m:
            for c in range(1, n + 1):
                spans.append((node(r, c), node(r + 1, c), ("v", r, c)))
                spans.append((node(r + 1, c), node(r, c), ("v", r, c)))
    for c in range(1, n + 1):
        spans.append((node(m, c), OUTSIDE, ("v", m, c)))
        spans.append((OUTSIDE, node(m, c), ("v", m, c)))

    by_source = {}
    for k, (src, _, _) in enumerate(spans):
        by_source.setdefault(src, []).append(k)

    cells = []
    for k, (src, dst, seg) in enumerate(spans):
        turns = []
        if dst != OUTSIDE:
            targets = [l for l in by_source[dst] if spans[l][2] != seg]
            share = 1.0 / len(targets)
            for l in targets:
                turns.append(
                    {
                        "to": l + 1,
                        "nominal": share,
                        "lower": max(0.0, share * (1.0 - delta_r)),
                        "upper": min(1.0, share * (1.0 + delta_r)),
                    }
                )
        cells.append({"id": k + 1, "source": src, "sink": dst, "turns": turns})

    intersections = [node(r, c) for r in range(1, m + 1) for c in range(1, n + 1)]
    return build_network(
        {"format": DOCUMENT_FORMAT, "intersections": intersections, "cells": cells}
    )


def random_network(rng: np.random.Generator, n_cells: int, n_nodes: int | None = None,
                   delta_r: float = 0.05, max_tries: int = 1000) -> Network:
    """Random valid network with ``n_cells`` cells.

    Intersections are visited in random order and each gets one entering
    and one leaving cell joined to the exterior or to an intersection
    visited earlier, so every cell is reachable from a source cell and can
    reach a destination cell. The remaining cells get random endpoints.
    Every movement sharing a node is permitted and nominal splits are drawn
    from a flat Dirichlet.
    """
    if n_cells < 1:
        raise BadDimensions("need at least one cell")
    if n_nodes is None:
        n_nodes = n_cells // 3
    n_nodes = max(0, min(n_nodes, n_cells // 2))
    names = [OUTSIDE] + [f"I{j + 1}" for j in range(n_nodes)]
    for _ in range(max_tries):
        src, dst = [], []
        for j in rng.permutation(n_nodes) + 1:
            earlier = [0] + sorted({d for d in dst if d != 0})
            src.append(int(rng.choice(earlier)))
            dst.append(int(j))
            src.append(int(j))
            dst.append(int(rng.choice(earlier)))
        while len(src) < n_cells:
            s_, d_ = (int(v) for v in rng.integers(0, len(names), 2))
            if s_ == d_ and s_ != 0:
                continue
            src.append(s_)
            dst.append(d_)
        order = rng.permutation(n_cells)
        src = [src[i] for i in order]
        dst = [dst[i] for i in order]
        cells = []
        for k in range(n_cells):
            turns = []
            if dst[k] != 0:
                targets = [l for l in range(n_cells) if src[l] == dst[k] and l != k]
                shares = rng.dirichlet(np.ones(len(targets)))
                shares /= shares.sum()
                for l, s in zip(targets, shares):
                    turns.append({
                        "to": l + 1,
                        "nominal": float(s),
                        "lower": max(0.0, min(float(s), float(s) * (1.0 - delta_r))),
                        "upper": min(1.0, max(float(s), float(s) * (1.0 + delta_r))),
                    })
            cells.append({"id": k + 1, "source": names[src[k]], "sink": names[dst[k]],
                          "turns": turns})
        try:
            return build_network({"cells": cells})
        except BadRowSum:
            # Dirichlet rounding can leave a row sum just outside the tolerance
            continue
    raise NetworkError(f"no valid random network after {max_tries} draws")
