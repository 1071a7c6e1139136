"""Random wireless multi-hop topologies and their conflict graphs."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial.distance import cdist, pdist, squareform

MAX_ATTEMPTS = 1000
DEFAULT_DENSITY = 8.0 / math.pi


class ConflictModel(str, Enum):
    INTERFACE = "interface"
    UNIT_DISK = "unitdisk"


class TopologyError(RuntimeError):
    pass


@dataclass(frozen=True)
class TopologyConfig:
    num_nodes: int
    node_density: float = DEFAULT_DENSITY
    link_range: float = 1.0
    conflict_model: ConflictModel = ConflictModel.UNIT_DISK
    interference_range: float = 1.0
    rng_seed: int = 0
    unit_disk_reference: str = "midpoint"

    def __post_init__(self):
        object.__setattr__(self, "conflict_model", ConflictModel(self.conflict_model))
        if self.num_nodes < 2:
            raise ValueError("num_nodes must be at least 2")
        if self.link_range <= 0 or self.node_density <= 0:
            raise ValueError("link_range and node_density must be positive")
        if (
            self.conflict_model is ConflictModel.UNIT_DISK
            and self.interference_range < self.link_range
        ):
            raise ValueError("interference_range must be >= link_range under unit-disk")


@dataclass(frozen=True)
class ConnectivityGraph:
    positions: np.ndarray  # (n, 2)
    edges: np.ndarray  # (E, 2) int, i < j, lexicographically sorted

    @property
    def num_nodes(self) -> int:
        return len(self.positions)

    @property
    def num_links(self) -> int:
        return len(self.edges)

    def adjacency(self, weights=None):
        n = self.num_nodes
        w = np.ones(self.num_links) if weights is None else np.asarray(weights, float)
        i, j = self.edges[:, 0], self.edges[:, 1]
        return coo_matrix(
            (np.concatenate([w, w]), (np.concatenate([i, j]), np.concatenate([j, i]))),
            shape=(n, n),
        ).tocsr()

    def is_connected(self) -> bool:
        ncomp, _ = connected_components(self.adjacency(), directed=False)
        return ncomp == 1


@dataclass(frozen=True)
class ConflictGraph:
    """Vertices are link ids of the source connectivity graph."""

    num_links: int
    conflicts: np.ndarray  # (C, 2) int, a < b, sorted
    neighbors: list = field(repr=False, compare=False, default=None)

    def __post_init__(self):
        if self.neighbors is None:
            nbrs = [[] for _ in range(self.num_links)]
            for a, b in self.conflicts:
                nbrs[a].append(int(b))
                nbrs[b].append(int(a))
            object.__setattr__(
                self, "neighbors", [np.array(sorted(x), dtype=np.int64) for x in nbrs]
            )

    @property
    def degrees(self) -> np.ndarray:
        return np.array([len(x) for x in self.neighbors], dtype=np.int64)

    def mean_degree(self) -> float:
        return float(self.degrees.mean()) if self.num_links else 0.0

    def is_independent(self, active) -> bool:
        active = np.asarray(active, dtype=bool)
        if len(self.conflicts) == 0:
            return True
        return not np.any(active[self.conflicts[:, 0]] & active[self.conflicts[:, 1]])


def _sorted_pairs(pairs) -> np.ndarray:
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if len(pairs) == 0:
        return pairs
    pairs = np.sort(pairs, axis=1)
    pairs = np.unique(pairs, axis=0)
    return pairs[pairs[:, 0] != pairs[:, 1]]


def connectivity_from_positions(positions, link_range: float) -> ConnectivityGraph:
    positions = np.asarray(positions, dtype=float)
    dist = squareform(pdist(positions)) if len(positions) > 1 else np.zeros((1, 1))
    i, j = np.nonzero(np.triu(dist <= link_range, k=1))
    return ConnectivityGraph(positions, _sorted_pairs(np.column_stack([i, j])))


def line_graph_conflicts(g: ConnectivityGraph) -> ConflictGraph:
    """Interface model: two links conflict iff they share an endpoint."""
    incident = [[] for _ in range(g.num_nodes)]
    for e, (i, j) in enumerate(g.edges):
        incident[i].append(e)
        incident[j].append(e)
    pairs = [
        (a, b)
        for links in incident
        for k, a in enumerate(links)
        for b in links[k + 1:]
    ]
    return ConflictGraph(g.num_links, _sorted_pairs(pairs))


def unit_disk_conflicts(
    g: ConnectivityGraph, interference_range: float, reference: str = "midpoint"
) -> ConflictGraph:
    """Unit-disk interference between links.

    With ``reference="midpoint"`` two links conflict iff their midpoints are
    within `interference_range`; with ``"endpoint"`` iff some endpoint of one
    lies within range of some endpoint of the other. Links sharing a node
    always conflict, so the result contains the line graph whenever
    ``interference_range >= link_range``.
    """
    if interference_range <= 0:
        raise ValueError("interference_range must be positive")
    if g.num_links == 0:
        return ConflictGraph(0, np.zeros((0, 2), dtype=np.int64))
    a, b = g.edges[:, 0], g.edges[:, 1]
    if reference == "midpoint":
        mid = 0.5 * (g.positions[a] + g.positions[b])
        close = cdist(mid, mid) <= interference_range
    elif reference == "endpoint":
        node_close = cdist(g.positions, g.positions) <= interference_range
        close = (
            node_close[np.ix_(a, a)]
            | node_close[np.ix_(a, b)]
            | node_close[np.ix_(b, a)]
            | node_close[np.ix_(b, b)]
        )
    else:
        raise ValueError(f"unknown reference {reference!r}")
    shared = (a[:, None] == a[None, :]) | (a[:, None] == b[None, :])
    shared |= (b[:, None] == a[None, :]) | (b[:, None] == b[None, :])
    u, v = np.nonzero(np.triu(close | shared, k=1))
    return ConflictGraph(g.num_links, _sorted_pairs(np.column_stack([u, v])))


def normalized_laplacian(cg: ConflictGraph) -> np.ndarray:
    """Dense I - D^-1/2 A D^-1/2; rows of isolated vertices are zero."""
    n = cg.num_links
    lap = np.zeros((n, n))
    deg = cg.degrees.astype(float)
    lap[np.diag_indices(n)] = (deg > 0).astype(float)
    if len(cg.conflicts):
        a, b = cg.conflicts[:, 0], cg.conflicts[:, 1]
        w = -1.0 / np.sqrt(deg[a] * deg[b])
        lap[a, b] = w
        lap[b, a] = w
    return lap


def build_conflicts(
    g: ConnectivityGraph,
    model,
    interference_range: float = 1.0,
    reference: str = "midpoint",
) -> ConflictGraph:
    model = ConflictModel(model)
    if model is ConflictModel.INTERFACE:
        return line_graph_conflicts(g)
    return unit_disk_conflicts(g, interference_range, reference)


@dataclass(frozen=True)
class NetworkInstance:
    graph: ConnectivityGraph
    conflict_graph: ConflictGraph
    conflict_model: ConflictModel
    link_range: float
    interference_range: float
    seed: int | None = None

    @property
    def num_nodes(self) -> int:
        return self.graph.num_nodes

    @property
    def num_links(self) -> int:
        return self.graph.num_links

    @property
    def edges(self) -> np.ndarray:
        return self.graph.edges

    def laplacian(self) -> np.ndarray:
        return normalized_laplacian(self.conflict_graph)

    def to_dict(self) -> dict:
        return {
            "format": "biasbp-instance/1",
            "seed": self.seed,
            "conflict_model": self.conflict_model.value,
            "link_range": self.link_range,
            "interference_range": self.interference_range,
            # float.hex keeps the reload bit-exact
            "positions": [[float(x).hex() for x in p] for p in self.graph.positions],
            "edges": self.graph.edges.tolist(),
            "conflicts": self.conflict_graph.conflicts.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkInstance":
        positions = np.array(
            [[float.fromhex(x) for x in p] for p in d["positions"]], dtype=float
        ).reshape(-1, 2)
        edges = np.asarray(d["edges"], dtype=np.int64).reshape(-1, 2)
        conflicts = np.asarray(d["conflicts"], dtype=np.int64).reshape(-1, 2)
        graph = ConnectivityGraph(positions, edges)
        return cls(
            graph,
            ConflictGraph(len(edges), conflicts),
            ConflictModel(d["conflict_model"]),
            float(d["link_range"]),
            float(d["interference_range"]),
            d.get("seed"),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "NetworkInstance":
        return cls.from_dict(json.loads(Path(path).read_text()))


def make_instance(
    positions,
    link_range: float = 1.0,
    conflict_model=ConflictModel.UNIT_DISK,
    interference_range: float = 1.0,
    seed=None,
    unit_disk_reference: str = "midpoint",
) -> NetworkInstance:
    g = connectivity_from_positions(positions, link_range)
    cg = build_conflicts(g, conflict_model, interference_range, unit_disk_reference)
    return NetworkInstance(
        g, cg, ConflictModel(conflict_model), link_range, interference_range, seed
    )


def generate_network(cfg: TopologyConfig) -> NetworkInstance:
    """Uniform points in a square of area num_nodes/density, resampled
    until the disk graph is connected."""
    rng = np.random.default_rng(cfg.rng_seed)
    side = math.sqrt(cfg.num_nodes / cfg.node_density)
    for _ in range(MAX_ATTEMPTS):
        positions = rng.uniform(0.0, side, size=(cfg.num_nodes, 2))
        g = connectivity_from_positions(positions, cfg.link_range)
        if g.is_connected():
            cg = build_conflicts(
                g, cfg.conflict_model, cfg.interference_range, cfg.unit_disk_reference
            )
            return NetworkInstance(
                g,
                cg,
                cfg.conflict_model,
                cfg.link_range,
                cfg.interference_range,
                cfg.rng_seed,
            )
    raise TopologyError(
        f"no connected instance after {MAX_ATTEMPTS} attempts "
        f"(num_nodes={cfg.num_nodes}, density={cfg.node_density})"
    )
