"""Multi-channel hierarchical pooling classifier with a hand-written backward pass.

Layer ``l`` runs a K-hop convolution block and, for ``l < L``, a pooling block
of the same shape that produces a soft cluster assignment.  Every layer's
node embeddings are read out into a graph-level vector; the normalised
vectors are concatenated and fed to a softmax classifier.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import NumericalError, ShapeError, ValidationError
from .graph import Graph, normalized_adjacency
from .numerics import ParamStore, glorot_uniform, relu, row_entropy, sigmoid, softmax_rows


@dataclass(frozen=True)
class PoolingConfig:
    layers: int = 3
    hops: int = 3
    dim: int = 64
    cluster_sizes: tuple = (8, 2, 2)
    entropy_coeff: float = 1.0
    epsilon: float = 1e-12

    def __post_init__(self):
        object.__setattr__(self, "cluster_sizes", tuple(int(c) for c in self.cluster_sizes))
        if self.layers < 1:
            raise ValidationError("need at least one pooling layer")
        if self.hops < 1:
            raise ValidationError("need at least one propagation step per block")
        if self.dim < 1:
            raise ValidationError("hidden dimension must be positive")
        if len(self.cluster_sizes) != self.layers:
            raise ValidationError(
                f"{self.layers} layers but {len(self.cluster_sizes)} cluster sizes"
            )
        if any(c < 1 for c in self.cluster_sizes):
            raise ValidationError("cluster sizes must be positive")
        if any(b > a for a, b in zip(self.cluster_sizes, self.cluster_sizes[1:])):
            raise ValidationError("cluster sizes must be nonincreasing")
        if self.cluster_sizes[-1] < 2:
            raise ValidationError("the last pooling graph needs at least 2 clusters")
        if self.entropy_coeff < 0:
            raise ValidationError("entropy_coeff must be nonnegative")

    @classmethod
    def for_max_nodes(cls, max_nodes: int, layers: int = 3, **kw) -> "PoolingConfig":
        return cls(layers=layers, cluster_sizes=cluster_schedule(max_nodes, layers), **kw)


def cluster_schedule(max_nodes: int, layers: int, ratio: float = 0.25) -> tuple:
    """n_{l+1} = max(2, ceil(ratio * n_l)) starting from the largest graph."""
    sizes = []
    n = max_nodes
    for _ in range(layers):
        n = max(2, math.ceil(ratio * n))
        sizes.append(n)
    return tuple(sizes)


# parameter naming ---------------------------------------------------------

def conv_name(layer: int, hop: int) -> str:
    return f"conv.{layer}.{hop}"


def pool_name(layer: int, hop: int) -> str:
    return f"pool.{layer}.{hop}"


def importance_name(layer: int) -> str:
    return f"importance.{layer}"


CLS_W = "classifier.weight"
CLS_B = "classifier.bias"


def param_shapes(cfg: PoolingConfig, in_dim: int, num_classes: int) -> dict:
    shapes = {}
    d, K, L = cfg.dim, cfg.hops, cfg.layers
    for l in range(L + 1):
        first = in_dim if l == 0 else d
        for k in range(K):
            shapes[conv_name(l, k)] = (first if k == 0 else d, d)
    for l in range(L):
        first = in_dim if l == 0 else d
        for k in range(K):
            out = cfg.cluster_sizes[l] if k == K - 1 else d
            shapes[pool_name(l, k)] = (first if k == 0 else d, out)
    for l in range(L + 1):
        shapes[importance_name(l)] = (d,)
    shapes[CLS_W] = ((L + 1) * d, num_classes)
    shapes[CLS_B] = (num_classes,)
    return shapes


def init_params(cfg: PoolingConfig, in_dim: int, num_classes: int, seed: int = 0) -> ParamStore:
    """Glorot-uniform weights, zero importance vectors and bias."""
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in param_shapes(cfg, in_dim, num_classes).items():
        if name == CLS_B:
            tensors[name] = np.zeros(shape)
        elif len(shape) == 1:
            tensors[name] = glorot_uniform(rng, shape[0], 1, shape=shape)
        else:
            tensors[name] = glorot_uniform(rng, shape[0], shape[1])
    return ParamStore(tensors, rng_seed=seed)


def _check_shapes(what: str, **mats):
    names = list(mats)
    for a, b in zip(names, names[1:]):
        if mats[a].shape[-1] != mats[b].shape[0]:
            raise ShapeError(
                f"{what}: {a} {mats[a].shape} does not conform with {b} {mats[b].shape}"
            )


# forward building blocks ---------------------------------------------------

def gcn_layer(A_hat: np.ndarray, H: np.ndarray, W: np.ndarray) -> np.ndarray:
    """relu(A_hat @ H @ W)."""
    _check_shapes("gcn_layer", A_hat=A_hat, H=H, W=W)
    return relu(A_hat @ H @ W)


def _block_forward(A_hat, X, weights):
    """K chained propagation steps; returns output and per-step (input, preactivation)."""
    h = X
    cache = []
    for W in weights:
        _check_shapes("gnn_block", A_hat=A_hat, H=h, W=W)
        p = A_hat @ h @ W
        cache.append((h, p))
        h = np.maximum(p, 0.0)
    return h, cache


def gnn_block(A: np.ndarray, X: np.ndarray, weights: Sequence[np.ndarray]) -> np.ndarray:
    """Run ``len(weights)`` propagation steps on the self-looped, normalised ``A``."""
    if len(weights) < 1:
        raise ValidationError("gnn_block needs at least one weight matrix")
    return _block_forward(normalized_adjacency(A), np.asarray(X, dtype=np.float64), weights)[0]


def assignment_matrix(A: np.ndarray, X: np.ndarray, pool_weights: Sequence[np.ndarray]) -> np.ndarray:
    return softmax_rows(gnn_block(A, X, pool_weights))


def coarsen(C: np.ndarray, H: np.ndarray, A: np.ndarray):
    """Pool node features and adjacency through a soft assignment: (C^T H, C^T A C)."""
    if C.shape[0] != H.shape[0] or A.shape != (C.shape[0], C.shape[0]):
        raise ShapeError(f"coarsen: C {C.shape}, H {H.shape}, A {A.shape} do not conform")
    return C.T @ H, C.T @ A @ C


def importance_weights(Z: np.ndarray, w: np.ndarray):
    """Per-node scores theta = logistic(Z w) and their normalised form theta / sum(theta).

    The ratio is formed from log-sigmoids so it stays finite when every score
    underflows.
    """
    t = Z @ w
    log_theta = -np.logaddexp(0.0, -t)
    alpha = np.exp(log_theta - log_theta.max())
    alpha /= alpha.sum()
    return sigmoid(t), alpha


def importance_readout(Z: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Weighted node mean with per-node scores logistic(Z_i . w)."""
    return importance_weights(Z, w)[1] @ Z


def global_readout(S_list: Sequence[np.ndarray], epsilon: float = 1e-12) -> np.ndarray:
    return np.concatenate([s / (s.sum() + epsilon) for s in S_list])


def classify(S: np.ndarray, W: np.ndarray, b: np.ndarray) -> np.ndarray:
    if S.shape[0] != W.shape[0] or W.shape[1] != b.shape[0]:
        raise ShapeError(f"classify: S {S.shape}, W {W.shape}, b {b.shape} do not conform")
    return softmax_rows(S @ W + b)


@dataclass
class LayerState:
    """Per-layer intermediates of one forward pass.

    ``adjacency[l]``/``features[l]`` are the inputs of layer l (A^0, X^0 are the
    graph's own), ``embeddings[l]`` the convolution output Z_l, ``assignments[l]``
    the soft cluster matrix C^l (only for l < L) and ``readouts[l]`` S_l.
    """

    adjacency: list = field(default_factory=list)
    features: list = field(default_factory=list)
    norm_adjacency: list = field(default_factory=list)
    embeddings: list = field(default_factory=list)
    assignments: list = field(default_factory=list)
    readouts: list = field(default_factory=list)
    global_vector: np.ndarray | None = None
    logits: np.ndarray | None = None
    _conv_cache: list = field(default_factory=list, repr=False)
    _pool_cache: list = field(default_factory=list, repr=False)
    _pool_logits: list = field(default_factory=list, repr=False)
    _theta: list = field(default_factory=list, repr=False)


def _weights(params, name_fn, layer, hops):
    return [params[name_fn(layer, k)] for k in range(hops)]


def forward(g: Graph, params, cfg: PoolingConfig):
    """Class probabilities for ``g`` plus the layer state needed for backward."""
    if g.num_features != params[conv_name(0, 0)].shape[0]:
        raise ShapeError(
            f"graph has {g.num_features} features, model expects {params[conv_name(0, 0)].shape[0]}"
        )
    st = LayerState()
    A, X = g.adjacency, g.features
    L, K = cfg.layers, cfg.hops
    for l in range(L + 1):
        st.adjacency.append(A)
        st.features.append(X)
        A_hat = normalized_adjacency(A)
        st.norm_adjacency.append(A_hat)
        Z, ccache = _block_forward(A_hat, X, _weights(params, conv_name, l, K))
        st.embeddings.append(Z)
        st._conv_cache.append(ccache)
        theta, alpha = importance_weights(Z, params[importance_name(l)])
        st._theta.append((theta, alpha))
        st.readouts.append(alpha @ Z)
        if l == L:
            break
        G, pcache = _block_forward(A_hat, X, _weights(params, pool_name, l, K))
        st._pool_cache.append(pcache)
        st._pool_logits.append(G)
        C = softmax_rows(G)
        st.assignments.append(C)
        X, A = coarsen(C, Z, A)
        # C^T A C is symmetric in exact arithmetic; remove rounding asymmetry
        A = 0.5 * (A + A.T)
    st.global_vector = global_readout(st.readouts, cfg.epsilon)
    st.logits = st.global_vector @ params[CLS_W] + params[CLS_B]
    return softmax_rows(st.logits), st


def entropy_term(C_list: Sequence[np.ndarray], cfg: PoolingConfig) -> float:
    return cfg.entropy_coeff * float(sum(row_entropy(C).mean() for C in C_list))


def mcgc_loss(O: np.ndarray, label: int, C_list: Sequence[np.ndarray], cfg: PoolingConfig) -> float:
    """Cross-entropy of ``O`` at ``label`` plus the scaled mean row entropy of each assignment."""
    ce = -math.log(max(float(O[label]), cfg.epsilon))
    return ce + entropy_term(C_list, cfg)


def loss_fn(g: Graph, params, cfg: PoolingConfig) -> float:
    O, st = forward(g, params, cfg)
    return mcgc_loss(O, g.label, st.assignments, cfg)


# backward ---------------------------------------------------------------

def _block_backward(A_hat, weights, cache, g_out, grads, names):
    """Backprop through chained relu(A_hat h W); returns (g_input, g_A_hat)."""
    gA_hat = np.zeros_like(A_hat)
    g = g_out
    for k in range(len(weights) - 1, -1, -1):
        h, p = cache[k]
        gp = g * (p > 0)
        ah = A_hat @ h
        grads[names[k]] += ah.T @ gp
        gA_hat += gp @ (h @ weights[k]).T
        g = A_hat.T @ gp @ weights[k].T
    return g, gA_hat


def _norm_backward(A, A_hat, gA_hat):
    """Gradient w.r.t. raw A of D^-1/2 (A + I) D^-1/2."""
    deg = A.sum(axis=1) + 1.0
    s = 1.0 / np.sqrt(deg)
    gA = gA_hat * np.outer(s, s)
    prod = gA_hat * A_hat
    gdeg = -0.5 / deg * (prod.sum(axis=1) + prod.sum(axis=0))
    return gA + gdeg[:, None]


def param_gradients(g: Graph, params, cfg: PoolingConfig, state=None):
    """Return (loss, gradient ParamStore) for a single graph."""
    if state is None:
        O, st = forward(g, params, cfg)
    else:
        O, st = state
    loss = mcgc_loss(O, g.label, st.assignments, cfg)
    grads = params.zeros_like() if isinstance(params, ParamStore) else ParamStore(
        {k: np.zeros_like(v) for k, v in params.items()}
    )
    L, K, eps = cfg.layers, cfg.hops, cfg.epsilon
    d = cfg.dim

    # classifier
    onehot = np.zeros_like(O)
    onehot[g.label] = 1.0
    g_logits = O - onehot if O[g.label] > eps else np.zeros_like(O)
    grads[CLS_B] = g_logits
    grads[CLS_W] = np.outer(st.global_vector, g_logits)
    g_global = params[CLS_W] @ g_logits

    # per-channel normalisation and importance readout
    gZ = []
    for l in range(L + 1):
        S = st.readouts[l]
        gu = g_global[l * d:(l + 1) * d]
        total = S.sum() + eps
        u = S / total
        gS = gu / total - (gu @ u) / total
        Z, (theta, alpha) = st.embeddings[l], st._theta[l]
        # d S / d t_i = alpha_i (1 - theta_i) (Z_i - S)
        g_t = (Z @ gS - S @ gS) * alpha * (1.0 - theta)
        grads[importance_name(l)] = Z.T @ g_t
        gZ.append(np.outer(alpha, gS) + np.outer(g_t, params[importance_name(l)]))

    gX_next = None
    gA_next = None
    for l in range(L, -1, -1):
        A, A_hat = st.adjacency[l], st.norm_adjacency[l]
        gZ_l = gZ[l]
        gA = np.zeros_like(A)
        if l < L:
            C, Z = st.assignments[l], st.embeddings[l]
            # A^{l+1} was symmetrised, so its gradient is the symmetric part
            gA_sym = 0.5 * (gA_next + gA_next.T)
            gC = Z @ gX_next.T + A @ C @ gA_sym.T + A.T @ C @ gA_sym
            gZ_l = gZ_l + C @ gX_next
            gA += C @ gA_sym @ C.T
            n_rows = C.shape[0]
            log_c = np.zeros_like(C)
            pos = C > 0
            log_c[pos] = np.log(C[pos])
            gC += cfg.entropy_coeff / n_rows * np.where(pos, -(log_c + 1.0), 0.0)
            gG = C * (gC - (gC * C).sum(axis=1, keepdims=True))
            gX_pool, gAh_pool = _block_backward(
                A_hat, _weights(params, pool_name, l, K), st._pool_cache[l], gG, grads,
                [pool_name(l, k) for k in range(K)],
            )
        else:
            gX_pool, gAh_pool = 0.0, 0.0
        gX_conv, gAh_conv = _block_backward(
            A_hat, _weights(params, conv_name, l, K), st._conv_cache[l], gZ_l, grads,
            [conv_name(l, k) for k in range(K)],
        )
        if l == 0:
            break
        gA += _norm_backward(A, A_hat, gAh_conv + gAh_pool)
        gX_next = gX_conv + gX_pool
        gA_next = gA
    if not np.all(np.isfinite(grads.flat)):
        bad = next(k for k in grads if not np.all(np.isfinite(grads[k])))
        raise NumericalError(f"non-finite gradient for {bad}")
    return loss, grads


# checkpoints ---------------------------------------------------------------

def save_checkpoint(path, params: ParamStore, cfg: PoolingConfig, extra: dict | None = None) -> None:
    """Write config and tensors to one ``.npz``; float64 arrays round-trip bit-exactly."""
    meta = {"pooling_config": asdict(cfg), "order": list(params), "rng_seed": params.rng_seed}
    if extra:
        meta["extra"] = extra
    arrays = {f"param::{k}": v for k, v in params.items()}
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        np.savez(fh, __meta__=np.array(json.dumps(meta)), **arrays)
    tmp.replace(path)


def load_checkpoint(path):
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(str(z["__meta__"]))
        tensors = {k: z[f"param::{k}"] for k in meta["order"]}
    cfg = PoolingConfig(**meta["pooling_config"])
    return ParamStore(tensors, rng_seed=meta.get("rng_seed")), cfg, meta.get("extra", {})


def predict(g: Graph, params, cfg: PoolingConfig) -> int:
    O, _ = forward(g, params, cfg)
    return int(np.argmax(O))
