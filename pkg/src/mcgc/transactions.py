"""Transaction records -> merged edges -> K-order transaction pattern graphs."""

from __future__ import annotations

import csv
import logging
import math
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, NamedTuple

import numpy as np

from .errors import SchemaError, UnknownAddressError, ValidationError
from .graph import Graph

log = logging.getLogger(__name__)

REQUIRED_COLUMNS = ("from", "to", "amount", "timestamp")
NUM_NODE_FEATURES = 7
SECONDS_PER_DAY = 86400.0


class TxRecord(NamedTuple):
    from_addr: str
    to_addr: str
    amount: float
    timestamp: int


@dataclass
class MergedEdge:
    """All records between one unordered address pair.

    ``endpoints`` is sorted; "out" is the direction endpoints[0] -> endpoints[1].
    """

    endpoints: tuple
    total_amount_out: float = 0.0
    total_amount_in: float = 0.0
    count_out: int = 0
    count_in: int = 0
    timestamp_sum: float = 0.0
    min_timestamp: int | None = None
    max_timestamp: int | None = None

    @property
    def record_count(self) -> int:
        return self.count_out + self.count_in

    @property
    def mean_timestamp(self) -> float:
        return self.timestamp_sum / self.record_count

    @property
    def total_amount(self) -> float:
        return self.total_amount_out + self.total_amount_in

    def amount_from(self, addr) -> float:
        return self.total_amount_out if addr == self.endpoints[0] else self.total_amount_in

    def count_from(self, addr) -> int:
        return self.count_out if addr == self.endpoints[0] else self.count_in

    def other(self, addr):
        a, b = self.endpoints
        return b if addr == a else a


class ParseResult(NamedTuple):
    records: list
    dropped: int
    errors: list


def parse_tx_csv(path) -> ParseResult:
    """Read a ``from,to,amount,timestamp`` CSV (any column order).

    Self-transfers and malformed rows are skipped and counted in ``dropped``;
    ``errors`` holds one message per malformed row with its line number.
    """
    path = Path(path)
    records, errors = [], []
    dropped = 0
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = [h.strip() for h in (reader.fieldnames or [])]
        reader.fieldnames = header
        for col in REQUIRED_COLUMNS:
            if col not in header:
                raise SchemaError(f"{path}: missing column {col!r}")
        for row in reader:
            line = reader.line_num
            try:
                src = row["from"].strip()
                dst = row["to"].strip()
                amount = float(row["amount"])
                ts = int(row["timestamp"])
                if not src or not dst:
                    raise ValueError("empty address")
                if not math.isfinite(amount) or amount < 0:
                    raise ValueError(f"bad amount {row['amount']!r}")
                if ts <= 0:
                    raise ValueError(f"bad timestamp {row['timestamp']!r}")
            except (ValueError, TypeError, AttributeError) as exc:
                errors.append(f"{path}:{line}: {exc}")
                log.warning("skipping row %s:%d: %s", path, line, exc)
                dropped += 1
                continue
            if src == dst:
                dropped += 1
                continue
            records.append(TxRecord(src, dst, amount, ts))
    return ParseResult(records, dropped, errors)


def write_tx_csv(path, records: Iterable[TxRecord]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REQUIRED_COLUMNS)
        for r in records:
            w.writerow([r.from_addr, r.to_addr, repr(float(r.amount)), int(r.timestamp)])


def merge_multi_edges(records: Iterable[TxRecord]) -> dict:
    """Collapse records into one MergedEdge per unordered address pair."""
    edges: dict = {}
    for r in records:
        key = (r.from_addr, r.to_addr) if r.from_addr < r.to_addr else (r.to_addr, r.from_addr)
        e = edges.get(key)
        if e is None:
            e = edges[key] = MergedEdge(key)
        if r.from_addr == key[0]:
            e.total_amount_out += r.amount
            e.count_out += 1
        else:
            e.total_amount_in += r.amount
            e.count_in += 1
        e.timestamp_sum += r.timestamp
        e.min_timestamp = r.timestamp if e.min_timestamp is None else min(e.min_timestamp, r.timestamp)
        e.max_timestamp = r.timestamp if e.max_timestamp is None else max(e.max_timestamp, r.timestamp)
    return edges


def neighbor_index(edges: Mapping) -> dict:
    """address -> sorted list of neighbouring addresses."""
    nbrs: dict = {}
    for a, b in edges:
        nbrs.setdefault(a, set()).add(b)
        nbrs.setdefault(b, set()).add(a)
    return {k: sorted(v) for k, v in nbrs.items()}


def khop_ball(target, nbrs: Mapping, k: int) -> dict:
    """Breadth-first distances of every address within ``k`` hops of ``target``."""
    dist = {target: 0}
    queue = deque([target])
    while queue:
        u = queue.popleft()
        if dist[u] == k:
            continue
        for v in nbrs.get(u, ()):
            if v not in dist:
                dist[v] = dist[u] + 1
                queue.append(v)
    return dist


def build_pattern_graph(
    target,
    edges: Mapping,
    k: int = 4,
    *,
    label: int = 0,
    edge_weights: str = "binary",
    max_nodes: int | None = 1000,
    nbrs: Mapping | None = None,
) -> Graph:
    """Induced subgraph on the ``k``-hop ball around ``target``.

    Nodes are ordered by (hop distance, address) so the target is node 0.
    When the ball exceeds ``max_nodes`` the farthest nodes are cut, ties
    broken by address order. Features are left as a zero placeholder column;
    use :func:`build_node_features` or :func:`pattern_graph_with_features`.
    """
    if k < 0:
        raise ValidationError("K must be nonnegative")
    if edge_weights not in ("binary", "log-amount"):
        raise ValidationError(f"unknown edge weighting {edge_weights!r}")
    if nbrs is None:
        nbrs = neighbor_index(edges)
    if target not in nbrs:
        raise UnknownAddressError(f"address {target!r} does not appear in any transaction")
    dist = khop_ball(target, nbrs, k)
    order = sorted(dist, key=lambda a: (dist[a], a))
    if max_nodes is not None and len(order) > max_nodes:
        order = order[:max_nodes]
    index = {a: i for i, a in enumerate(order)}
    n = len(order)
    adj = np.zeros((n, n))
    for a in order:
        for b in nbrs[a]:
            j = index.get(b)
            if j is None or b < a:
                continue
            e = edges[(a, b)]
            if edge_weights == "binary":
                w = 1.0
            else:
                w = math.log1p(max(e.total_amount_out, e.total_amount_in))
            adj[index[a], j] = adj[j, index[a]] = w
    return Graph(adj, np.zeros((n, 1)), label, node_ids=order, target_index=index[target])


def build_node_features(g: Graph, edges: Mapping) -> np.ndarray:
    """Seven per-node transaction features restricted to edges inside ``g``.

    Columns: log1p(in-amount), log1p(out-amount), in-degree, out-degree,
    merged record count, mean-timestamp offset from the target (days),
    is-target flag.
    """
    if g.node_ids is None or g.target_index is None:
        raise ValidationError("node features need a pattern graph with node_ids and target_index")
    ids = g.node_ids
    index = {a: i for i, a in enumerate(ids)}
    n = len(ids)
    amt_in = np.zeros(n)
    amt_out = np.zeros(n)
    deg_in = np.zeros(n)
    deg_out = np.zeros(n)
    n_records = np.zeros(n)
    ts_sum = np.zeros(n)
    for (a, b), e in edges.items():
        i, j = index.get(a), index.get(b)
        if i is None or j is None:
            continue
        amt_out[i] += e.total_amount_out
        amt_in[j] += e.total_amount_out
        amt_out[j] += e.total_amount_in
        amt_in[i] += e.total_amount_in
        if e.count_out:
            deg_out[i] += 1
            deg_in[j] += 1
        if e.count_in:
            deg_out[j] += 1
            deg_in[i] += 1
        for v in (i, j):
            n_records[v] += e.record_count
            ts_sum[v] += e.timestamp_sum
    mean_ts = np.divide(ts_sum, n_records, out=np.zeros(n), where=n_records > 0)
    t = g.target_index
    offset = np.where(n_records > 0, (mean_ts - mean_ts[t]) / SECONDS_PER_DAY, 0.0)
    if n_records[t] == 0:
        offset[:] = 0.0
    is_target = np.zeros(n)
    is_target[t] = 1.0
    return np.column_stack(
        [np.log1p(amt_in), np.log1p(amt_out), deg_in, deg_out, n_records, offset, is_target]
    )


def pattern_graph_with_features(target, edges, k=4, **kw) -> Graph:
    g = build_pattern_graph(target, edges, k, **kw)
    return Graph(g.adjacency, build_node_features(g, edges), g.label, g.node_ids, g.target_index)


# synthetic corpus -----------------------------------------------------------

YEAR_START = 1_600_000_000
YEAR_SECONDS = 365 * 86400


class _AddressBook:
    def __init__(self, rng):
        self.rng = rng
        self.used = set()

    def new(self) -> str:
        while True:
            a = "0x" + self.rng.bytes(20).hex()
            if a not in self.used:
                self.used.add(a)
                return a


def synth_tx_corpus(seed: int, n_phishing: int, n_normal: int):
    """Planted-structure corpus: returns (records, [(address, label), ...]).

    Phishing targets (label 1) have 2-5 counterparties, each a hub with 20-60
    further neighbours, and mostly receive funds. Normal targets (label 0)
    have 8-25 counterparties whose own fan-out is 0-3.
    """
    if n_phishing < 1 or n_normal < 1:
        raise ValidationError("need at least one target of each class")
    rng = np.random.default_rng(seed)
    book = _AddressBook(rng)
    records: list = []

    def tx(src, dst, count=1):
        for _ in range(count):
            amount = float(np.round(rng.lognormal(0.0, 1.5), 6))
            ts = int(YEAR_START + rng.integers(0, YEAR_SECONDS))
            records.append(TxRecord(src, dst, amount, ts))

    def hub_fanout(hub, lo, hi):
        for _ in range(int(rng.integers(lo, hi + 1))):
            other = book.new()
            if rng.random() < 0.5:
                tx(other, hub, int(rng.integers(1, 3)))
            else:
                tx(hub, other, int(rng.integers(1, 3)))

    kinds = [1] * n_phishing + [0] * n_normal
    rng.shuffle(kinds)
    targets = []
    for label in kinds:
        target = book.new()
        targets.append((target, int(label)))
        if label == 1:
            for _ in range(int(rng.integers(2, 6))):
                hub = book.new()
                if rng.random() < 0.85:
                    tx(hub, target, int(rng.integers(1, 4)))
                else:
                    tx(target, hub, int(rng.integers(1, 4)))
                hub_fanout(hub, 20, 60)
        else:
            for _ in range(int(rng.integers(8, 26))):
                cp = book.new()
                if rng.random() < 0.5:
                    tx(cp, target, int(rng.integers(1, 4)))
                else:
                    tx(target, cp, int(rng.integers(1, 4)))
                hub_fanout(cp, 0, 3)
    return records, targets


def build_corpus_dataset(records, targets, k=4, name="ethereum", **kw):
    """Pattern graph with transaction features for every labelled target."""
    from .graph import GraphDataset

    edges = merge_multi_edges(records)
    nbrs = neighbor_index(edges)
    graphs = []
    for addr, label in targets:
        graphs.append(pattern_graph_with_features(addr, edges, k, label=label, nbrs=nbrs, **kw))
    return GraphDataset(name, graphs, num_classes=2, metadata={"k_order": k})


def read_targets(path) -> list:
    """``address,label`` CSV (header optional) -> list of (address, int label)."""
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or not "".join(row).strip():
                continue
            if len(row) < 2:
                raise SchemaError(f"{path}:{lineno}: expected address,label")
            addr, lab = row[0].strip(), row[1].strip()
            if lineno == 1 and not lab.lstrip("-").isdigit():
                continue
            out.append((addr, int(lab)))
    return out


def write_targets(path, targets) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["address", "label"])
        w.writerows(targets)
