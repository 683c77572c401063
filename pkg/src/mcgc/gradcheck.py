"""Analytic-versus-finite-difference gradient checks on random small graphs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import Graph
from .model import PoolingConfig, init_params, loss_fn, param_gradients
from .numerics import finite_diff_grad, relative_error


def random_graph(rng: np.random.Generator, n: int, num_features: int, num_classes: int = 2,
                 density: float = 0.4) -> Graph:
    upper = np.triu(rng.random((n, n)) < density, k=1)
    # a random spanning path keeps the graph connected
    order = rng.permutation(n)
    for a, b in zip(order, order[1:]):
        upper[min(a, b), max(a, b)] = True
    adj = (upper | upper.T).astype(np.float64)
    feats = rng.random((n, num_features))
    return Graph(adj, feats, int(rng.integers(num_classes)))


@dataclass
class GradCheckResult:
    max_relative_error: float
    worst_parameter: str
    per_graph: list

    def passed(self, tol: float = 1e-4) -> bool:
        return self.max_relative_error < tol


def check_graph(g: Graph, params, cfg: PoolingConfig, eps: float = 1e-5) -> dict:
    """Per-tensor relative error between param_gradients and central differences."""
    _, analytic = param_gradients(g, params, cfg)
    numeric = finite_diff_grad(lambda p: loss_fn(g, p, cfg), params, eps)
    return {name: relative_error(analytic[name], numeric[name]) for name in params}


def run_gradcheck(seed: int = 0, n_graphs: int = 20, min_nodes: int = 4, max_nodes: int = 12,
                  dim: int = 4, layers: int = 2, num_classes: int = 2, num_features: int = 3,
                  eps: float = 1e-5, entropy_coeff: float = 1.0) -> GradCheckResult:
    rng = np.random.default_rng(seed)
    cfg = PoolingConfig(
        layers=layers, hops=3, dim=dim,
        cluster_sizes=tuple(max(2, 3 - l) for l in range(layers)),
        entropy_coeff=entropy_coeff,
    )
    worst, worst_name, per_graph = 0.0, "", []
    for i in range(n_graphs):
        n = int(rng.integers(min_nodes, max_nodes + 1))
        g = random_graph(rng, n, num_features, num_classes)
        params = init_params(cfg, num_features, num_classes, seed=int(rng.integers(2**31)))
        errs = check_graph(g, params, cfg, eps)
        name = max(errs, key=errs.get)
        per_graph.append({"graph": i, "nodes": n, "max_relative_error": errs[name], "parameter": name})
        if errs[name] > worst:
            worst, worst_name = errs[name], name
    return GradCheckResult(worst, worst_name, per_graph)
