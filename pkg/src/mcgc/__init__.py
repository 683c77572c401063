"""Multi-channel hierarchical graph pooling for graph classification and
transaction-pattern phishing detection."""

__version__ = "0.1.0"

from .graph import Graph, GraphDataset, add_self_loops, permute_nodes, sym_normalize
from .model import PoolingConfig, forward, init_params, mcgc_loss, param_gradients
from .train import TrainConfig, kfold_cv, train

__all__ = [
    "Graph",
    "GraphDataset",
    "PoolingConfig",
    "TrainConfig",
    "add_self_loops",
    "forward",
    "init_params",
    "kfold_cv",
    "mcgc_loss",
    "param_gradients",
    "permute_nodes",
    "sym_normalize",
    "train",
]
