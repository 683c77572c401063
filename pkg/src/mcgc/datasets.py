"""Dataset I/O: TU Dortmund benchmark format, JSON dataset directories, statistics."""

from __future__ import annotations

import hashlib
import json
import os
from collections import defaultdict
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import FormatError, ValidationError
from .graph import Graph, GraphDataset

DEGREE_CAP = 30


def _read_int_column(path: Path) -> np.ndarray:
    with open(path, encoding="utf-8") as fh:
        vals = [int(line.strip().split(",")[0]) for line in fh if line.strip()]
    return np.array(vals, dtype=np.int64)


def _require(path: Path) -> Path:
    if not path.is_file():
        raise FileNotFoundError(f"missing TU dataset file: {path}")
    return path


def load_tu_dataset(directory, name: str) -> GraphDataset:
    """Load ``name`` from a directory of TU text files.

    Graph labels are remapped to 0..|Y|-1 in sorted order. Node features are a
    one-hot of the node label when ``NAME_node_labels.txt`` exists, else a
    one-hot of the degree capped at 30.
    """
    d = Path(directory)
    edge_file = _require(d / f"{name}_A.txt")
    indicator = _read_int_column(_require(d / f"{name}_graph_indicator.txt"))
    raw_labels = _read_int_column(_require(d / f"{name}_graph_labels.txt"))
    node_label_file = d / f"{name}_node_labels.txt"
    node_labels = _read_int_column(node_label_file) if node_label_file.is_file() else None
    if node_labels is not None and len(node_labels) != len(indicator):
        raise FormatError(f"{node_label_file}: {len(node_labels)} labels for {len(indicator)} nodes")

    graph_ids = np.unique(indicator)
    if len(graph_ids) != len(raw_labels) or graph_ids[0] != 1 or graph_ids[-1] != len(raw_labels):
        raise FormatError(
            f"graph indicator names {len(graph_ids)} graphs but there are {len(raw_labels)} graph labels"
        )
    # node ids are 1-based and contiguous per graph
    members = defaultdict(list)
    for node, gid in enumerate(indicator, start=1):
        members[int(gid)].append(node)
    local = {}
    for gid, nodes in members.items():
        for i, node in enumerate(nodes):
            local[node] = (gid, i)

    edges = defaultdict(list)
    with open(edge_file, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                a, b = (int(x) for x in line.split(","))
            except ValueError:
                raise FormatError(f"{edge_file}:{lineno}: expected 'i, j', got {line.strip()!r}")
            if a not in local or b not in local:
                raise FormatError(f"{edge_file}:{lineno}: node index out of range")
            (ga, ia), (gb, ib) = local[a], local[b]
            if ga != gb:
                raise FormatError(
                    f"{edge_file}:{lineno}: edge ({a}, {b}) crosses graphs {ga} and {gb}"
                )
            edges[ga].append((ia, ib))

    classes = sorted(set(raw_labels.tolist()))
    class_index = {c: i for i, c in enumerate(classes)}
    if node_labels is not None:
        nl_values = sorted(set(node_labels.tolist()))
        nl_index = {v: i for i, v in enumerate(nl_values)}

    graphs = []
    for gid in range(1, len(raw_labels) + 1):
        nodes = members[gid]
        n = len(nodes)
        adj = np.zeros((n, n))
        for i, j in edges[gid]:
            if i != j:
                adj[i, j] = adj[j, i] = 1.0
        if node_labels is not None:
            feats = np.zeros((n, len(nl_values)))
            for i, node in enumerate(nodes):
                feats[i, nl_index[int(node_labels[node - 1])]] = 1.0
        else:
            deg = np.minimum(adj.sum(axis=1).astype(int), DEGREE_CAP)
            feats = np.zeros((n, DEGREE_CAP + 1))
            feats[np.arange(n), deg] = 1.0
        graphs.append(Graph(adj, feats, class_index[int(raw_labels[gid - 1])]))
    return GraphDataset(
        name, graphs, len(classes), metadata={"source": "tu", "class_values": classes}
    )


class DatasetStats(NamedTuple):
    num_graphs: int
    num_classes: int
    mean_nodes: float
    mean_edges: float


def dataset_stats(ds: GraphDataset) -> DatasetStats:
    if len(ds) == 0:
        raise ValidationError("cannot summarise an empty dataset")
    nodes = [g.num_nodes for g in ds.graphs]
    edges = [g.num_edges() for g in ds.graphs]
    return DatasetStats(len(ds), ds.num_classes, float(np.mean(nodes)), float(np.mean(edges)))


# JSON dataset directories -------------------------------------------------

MANIFEST = "manifest.json"


def _graph_to_json(g: Graph) -> dict:
    return {
        "node_ids": g.node_ids,
        "target_index": g.target_index,
        "adjacency": g.adjacency.tolist(),
        "features": g.features.tolist(),
        "label": g.label,
    }


def save_dataset_dir(ds: GraphDataset, directory) -> Path:
    """One JSON file per graph plus ``manifest.json`` (written last)."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    files = []
    for i, g in enumerate(ds.graphs):
        fname = f"graph_{i:05d}.json"
        with open(d / fname, "w", encoding="utf-8") as fh:
            json.dump(_graph_to_json(g), fh)
        files.append(fname)
    manifest = {
        "name": ds.name,
        "num_classes": ds.num_classes,
        "num_graphs": len(ds),
        "graphs": files,
        "metadata": ds.metadata,
    }
    tmp = d / (MANIFEST + ".tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    os.replace(tmp, d / MANIFEST)
    return d


def load_dataset_dir(directory) -> GraphDataset:
    d = Path(directory)
    mpath = d / MANIFEST
    if not mpath.is_file():
        raise FileNotFoundError(f"no {MANIFEST} in {d}")
    with open(mpath, encoding="utf-8") as fh:
        manifest = json.load(fh)
    graphs = []
    for fname in manifest["graphs"]:
        with open(d / fname, encoding="utf-8") as fh:
            rec = json.load(fh)
        graphs.append(
            Graph(
                np.array(rec["adjacency"], dtype=np.float64),
                np.array(rec["features"], dtype=np.float64),
                rec["label"],
                node_ids=rec.get("node_ids"),
                target_index=rec.get("target_index"),
            )
        )
    if len(graphs) != manifest["num_graphs"]:
        raise FormatError(f"manifest lists {manifest['num_graphs']} graphs, found {len(graphs)}")
    return GraphDataset(manifest["name"], graphs, manifest["num_classes"], manifest.get("metadata", {}))


def load_any(path, name: str | None = None) -> GraphDataset:
    """JSON dataset dir if it has a manifest, else a TU directory named after itself."""
    p = Path(path)
    if (p / MANIFEST).is_file():
        return load_dataset_dir(p)
    return load_tu_dataset(p, name or p.name)


def fingerprint(ds: GraphDataset) -> str:
    """SHA-256 over labels, adjacency and feature bytes, in dataset order."""
    h = hashlib.sha256()
    h.update(f"{ds.name}|{ds.num_classes}|{len(ds)}".encode())
    for g in ds.graphs:
        h.update(np.int64(g.label).tobytes())
        h.update(np.array(g.adjacency.shape, dtype=np.int64).tobytes())
        h.update(np.ascontiguousarray(g.adjacency).tobytes())
        h.update(np.array(g.features.shape, dtype=np.int64).tobytes())
        h.update(np.ascontiguousarray(g.features).tobytes())
    return h.hexdigest()


# published benchmark statistics: graphs, classes, mean nodes, mean edges
REFERENCE_STATS = {
    "MUTAG": (188, 2, 17.92, 20.42),
    "PTC": (344, 2, 14.29, 14.69),
    "PROTEINS": (1113, 2, 39.06, 72.82),
    "NCI1": (4110, 2, 29.87, 32.30),
    "NCI109": (4127, 2, 29.69, 32.13),
    "IMDB-BINARY": (1000, 2, 19.77, 96.53),
    "REDDIT-BINARY": (2000, 2, 429.63, 497.75),
    "Ethereum": (2518, 2, 120.43, 130.08),
}
NODE_TOLERANCE = 0.01
EDGE_TOLERANCE = 0.5


def compare_stats(stats: DatasetStats, expected, node_tol=NODE_TOLERANCE, edge_tol=EDGE_TOLERANCE) -> list:
    """One (check, observed, expected, ok) row per statistic."""
    graphs, classes, nodes, edges = expected
    return [
        ("graphs", stats.num_graphs, graphs, stats.num_graphs == graphs),
        ("classes", stats.num_classes, classes, stats.num_classes == classes),
        ("mean_nodes", stats.mean_nodes, nodes, abs(stats.mean_nodes - nodes) <= node_tol),
        ("mean_edges", stats.mean_edges, edges, abs(stats.mean_edges - edges) <= edge_tol),
    ]
