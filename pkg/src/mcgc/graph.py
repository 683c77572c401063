"""Dense graph containers and adjacency preprocessing."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import ValidationError


@dataclass(frozen=True, eq=False)
class Graph:
    """A single labelled graph with dense symmetric adjacency.

    ``node_ids`` and ``target_index`` are only set for transaction pattern
    graphs, where they hold the addresses and the position of the ego node.
    """

    adjacency: np.ndarray
    features: np.ndarray
    label: int
    node_ids: Optional[list] = None
    target_index: Optional[int] = None

    def __post_init__(self):
        adj = np.array(self.adjacency, dtype=np.float64)
        feats = np.array(self.features, dtype=np.float64)
        if feats.ndim == 1:
            feats = feats.reshape(-1, 1)
        if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
            raise ValidationError(f"adjacency must be square, got shape {adj.shape}")
        n = adj.shape[0]
        if n < 1:
            raise ValidationError("graph needs at least one node")
        if feats.shape[0] != n:
            raise ValidationError(
                f"features have {feats.shape[0]} rows but adjacency has {n} nodes"
            )
        if np.any(adj < 0):
            raise ValidationError("adjacency entries must be nonnegative")
        if not np.array_equal(adj, adj.T):
            raise ValidationError("adjacency must be symmetric")
        if np.any(np.diag(adj) != 0):
            raise ValidationError("raw adjacency must have a zero diagonal")
        if self.node_ids is not None and len(self.node_ids) != n:
            raise ValidationError("node_ids length does not match node count")
        if self.target_index is not None and not 0 <= self.target_index < n:
            raise ValidationError(f"target_index {self.target_index} out of range")
        adj.setflags(write=False)
        feats.setflags(write=False)
        object.__setattr__(self, "adjacency", adj)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "label", int(self.label))

    @property
    def num_nodes(self) -> int:
        return self.adjacency.shape[0]

    @property
    def num_features(self) -> int:
        return self.features.shape[1]

    def num_edges(self) -> int:
        """Undirected edge count, each symmetric pair counted once."""
        return int(np.count_nonzero(np.triu(self.adjacency, k=1)))

    def __eq__(self, other):
        if not isinstance(other, Graph):
            return NotImplemented
        return (
            self.label == other.label
            and self.target_index == other.target_index
            and self.node_ids == other.node_ids
            and np.array_equal(self.adjacency, other.adjacency)
            and np.array_equal(self.features, other.features)
        )


@dataclass
class GraphDataset:
    name: str
    graphs: list
    num_classes: int
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValidationError("a dataset needs at least two classes")
        for i, g in enumerate(self.graphs):
            if not 0 <= g.label < self.num_classes:
                raise ValidationError(
                    f"graph {i} has label {g.label} outside [0, {self.num_classes})"
                )

    def __len__(self):
        return len(self.graphs)

    def __getitem__(self, idx):
        return self.graphs[idx]

    @property
    def labels(self) -> np.ndarray:
        return np.array([g.label for g in self.graphs], dtype=np.int64)

    @property
    def max_nodes(self) -> int:
        return max(g.num_nodes for g in self.graphs)

    @property
    def num_features(self) -> int:
        widths = {g.num_features for g in self.graphs}
        if len(widths) != 1:
            raise ValidationError(f"non-uniform feature widths: {sorted(widths)}")
        return widths.pop()

    def subset(self, indices: Sequence[int]) -> "GraphDataset":
        return GraphDataset(
            self.name, [self.graphs[i] for i in indices], self.num_classes, dict(self.metadata)
        )


def _check_square(m: np.ndarray, what: str = "matrix") -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValidationError(f"{what} must be square, got shape {m.shape}")
    return m


def add_self_loops(adjacency: np.ndarray) -> np.ndarray:
    a = _check_square(adjacency, "adjacency")
    return a + np.eye(a.shape[0])


def sym_normalize(adjacency_with_loops: np.ndarray) -> np.ndarray:
    """Return D^-1/2 A D^-1/2 with D the diagonal of row sums."""
    a = _check_square(adjacency_with_loops, "adjacency")
    deg = a.sum(axis=1)
    if np.any(deg <= 0):
        bad = int(np.flatnonzero(deg <= 0)[0])
        raise ValidationError(f"degenerate degree at node {bad}: row sum {deg[bad]}")
    s = 1.0 / np.sqrt(deg)
    return s[:, None] * a * s[None, :]


def normalized_adjacency(adjacency: np.ndarray) -> np.ndarray:
    return sym_normalize(add_self_loops(adjacency))


def _check_perm(perm, n: int) -> np.ndarray:
    p = np.asarray(perm)
    if p.shape != (n,) or not np.issubdtype(p.dtype, np.integer):
        raise ValidationError(f"permutation must be {n} integers")
    if not np.array_equal(np.sort(p), np.arange(n)):
        raise ValidationError("permutation is not a bijection on node indices")
    return p


def permute_nodes(g: Graph, perm) -> Graph:
    """Reorder nodes so that new node ``i`` is old node ``perm[i]``."""
    p = _check_perm(perm, g.num_nodes)
    inverse = np.argsort(p)
    return Graph(
        adjacency=g.adjacency[np.ix_(p, p)],
        features=g.features[p],
        label=g.label,
        node_ids=None if g.node_ids is None else [g.node_ids[i] for i in p],
        target_index=None if g.target_index is None else int(inverse[g.target_index]),
    )


def inverse_permutation(perm) -> np.ndarray:
    return np.argsort(np.asarray(perm))
