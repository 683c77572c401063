"""Optimisers, the per-graph training loop and stratified k-fold cross-validation."""

from __future__ import annotations

import json
import logging
import math
import time
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import NumericalError, TrainingError, ValidationError
from .graph import GraphDataset
from .model import PoolingConfig, forward, init_params, param_gradients
from .numerics import ParamStore

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    epochs: int = 100
    folds: int = 10
    seed: int = 0
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 1
    entropy_coeff: float | None = None
    jobs: int = 1

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValidationError("learning_rate must be nonnegative")
        if self.epochs < 1:
            raise ValidationError("epochs must be at least 1")
        if self.folds < 2:
            raise ValidationError("need at least 2 folds")
        if self.optimizer not in ("adam", "sgd"):
            raise ValidationError(f"unknown optimizer {self.optimizer!r}")
        if self.batch_size < 1:
            raise ValidationError("batch_size must be at least 1")


class SGD:
    def __init__(self, params: ParamStore, lr: float):
        self.params = params
        self.lr = lr

    def step(self, grads) -> None:
        self.params.flat -= self.lr * grads.flat


class Adam:
    """Bias-corrected Adam; updates the ParamStore arrays in place."""

    def __init__(self, params: ParamStore, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = np.zeros_like(params.flat)
        self.v = np.zeros_like(params.flat)
        self._tmp = np.empty_like(params.flat)

    def step(self, grads) -> None:
        """``grads`` must share the parameter layout (a ParamStore from ``zeros_like``)."""
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        g, m, v, tmp = grads.flat, self.m, self.v, self._tmp
        # p -= lr * (m / c1) / (sqrt(v / c2) + eps), without temporaries
        m *= self.beta1
        np.multiply(g, 1.0 - self.beta1, out=tmp)
        m += tmp
        v *= self.beta2
        np.multiply(g, g, out=tmp)
        tmp *= 1.0 - self.beta2
        v += tmp
        np.divide(v, c2, out=tmp)
        np.sqrt(tmp, out=tmp)
        tmp += self.eps
        np.divide(m, tmp, out=tmp)
        tmp *= self.lr / c1
        self.params.flat -= tmp


def make_optimizer(params, cfg: TrainConfig):
    if cfg.optimizer == "adam":
        return Adam(params, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps)
    return SGD(params, cfg.learning_rate)


def evaluate_accuracy(predictions: Sequence[int], truth: Sequence[int]) -> float:
    if len(predictions) != len(truth):
        raise ValidationError(f"{len(predictions)} predictions for {len(truth)} labels")
    if len(truth) == 0:
        raise ValidationError("accuracy of an empty set is undefined")
    correct = sum(int(p) == int(t) for p, t in zip(predictions, truth))
    return correct / len(truth)


@dataclass
class Metrics:
    train_loss: list = field(default_factory=list)
    train_accuracy: list = field(default_factory=list)
    epoch_seconds: list = field(default_factory=list)
    fold_accuracy: list = field(default_factory=list)
    fold_curves: list = field(default_factory=list)
    mean_accuracy: float | None = None
    std_accuracy: float | None = None

    def to_json_dict(self) -> dict:
        """Deterministic content only; wall-clock timings are reported separately."""
        out = {}
        if self.fold_accuracy:
            out["fold_accuracy"] = self.fold_accuracy
            out["mean_accuracy"] = self.mean_accuracy
            out["std_accuracy"] = self.std_accuracy
            out["folds"] = [
                {"train_loss": c["train_loss"], "train_accuracy": c["train_accuracy"]}
                for c in self.fold_curves
            ]
        else:
            out["train_loss"] = self.train_loss
            out["train_accuracy"] = self.train_accuracy
        return out

    def timing(self) -> dict:
        if self.fold_curves:
            per_fold = [c["epoch_seconds"] for c in self.fold_curves]
        else:
            per_fold = [self.epoch_seconds]
        flat = [s for f in per_fold for s in f]
        return {
            "epoch_seconds": per_fold,
            "mean_epoch_seconds": float(np.mean(flat)) if flat else 0.0,
            "total_seconds": float(np.sum(flat)),
        }


def _effective_pcfg(pcfg: PoolingConfig, cfg: TrainConfig) -> PoolingConfig:
    if cfg.entropy_coeff is None:
        return pcfg
    return replace(pcfg, entropy_coeff=cfg.entropy_coeff)


def train(ds: GraphDataset, cfg: TrainConfig, pcfg: PoolingConfig, params: ParamStore | None = None):
    """Train on every graph of ``ds``; returns (params, Metrics).

    Each epoch visits the graphs in a seeded shuffled order and takes one
    optimiser step per ``batch_size`` graphs using the mean gradient.
    """
    if len(ds) == 0:
        raise ValidationError("cannot train on an empty dataset")
    pcfg = _effective_pcfg(pcfg, cfg)
    if params is None:
        params = init_params(pcfg, ds.num_features, ds.num_classes, seed=cfg.seed)
    else:
        params = params.copy()
    opt = make_optimizer(params, cfg)
    rng = np.random.default_rng(cfg.seed)
    metrics = Metrics()
    n = len(ds)
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        order = rng.permutation(n)
        total_loss = 0.0
        correct = 0
        for start in range(0, n, cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            acc_grad = None
            for idx in batch:
                g = ds.graphs[idx]
                try:
                    state = forward(g, params, pcfg)
                    loss, grads = param_gradients(g, params, pcfg, state=state)
                except NumericalError as exc:
                    raise TrainingError(f"epoch {epoch}, graph {idx}: {exc}") from exc
                if not math.isfinite(loss):
                    raise TrainingError(f"non-finite loss at epoch {epoch}, graph {idx}")
                total_loss += loss
                correct += int(np.argmax(state[0]) == g.label)
                if acc_grad is None:
                    acc_grad = grads
                else:
                    acc_grad.flat += grads.flat
            if len(batch) > 1:
                acc_grad.flat /= len(batch)
            opt.step(acc_grad)
        metrics.train_loss.append(total_loss / n)
        metrics.train_accuracy.append(correct / n)
        metrics.epoch_seconds.append(time.perf_counter() - t0)
        log.debug("epoch %d loss %.6f acc %.4f", epoch, metrics.train_loss[-1], metrics.train_accuracy[-1])
    if not params.all_finite():
        raise TrainingError("parameters became non-finite")
    return params, metrics


def predict_all(ds: GraphDataset, params, pcfg: PoolingConfig) -> list:
    return [int(np.argmax(forward(g, params, pcfg)[0])) for g in ds.graphs]


def evaluate(ds: GraphDataset, params, pcfg: PoolingConfig) -> float:
    return evaluate_accuracy(predict_all(ds, params, pcfg), ds.labels.tolist())


def stratified_folds(labels: Sequence[int], folds: int, seed: int) -> list:
    """Seeded stratified partition of ``range(len(labels))`` into ``folds`` test sets.

    Each class is shuffled and dealt round-robin, continuing where the previous
    class stopped, so fold sizes differ by at most one and per-class counts per
    fold differ by at most one.
    """
    labels = np.asarray(labels)
    n = len(labels)
    if folds < 2:
        raise ValidationError("need at least 2 folds")
    if n < folds:
        raise ValidationError(f"{n} graphs cannot fill {folds} folds")
    classes, counts = np.unique(labels, return_counts=True)
    leave_one_out = folds == n
    for c, cnt in zip(classes, counts):
        if cnt < folds and not leave_one_out:
            raise ValidationError(f"class {c} has {cnt} members, fewer than {folds} folds")
        if cnt < 2:
            warnings.warn(f"class {c} is absent from some training folds", stacklevel=2)
    rng = np.random.default_rng(seed)
    out = [[] for _ in range(folds)]
    slot = 0
    for c in classes:
        members = np.flatnonzero(labels == c)
        rng.shuffle(members)
        for idx in members:
            out[slot].append(int(idx))
            slot = (slot + 1) % folds
    return [sorted(f) for f in out]


def _run_fold(args):
    ds, cfg, pcfg, fold, test_idx = args
    test = set(test_idx)
    train_idx = [i for i in range(len(ds)) if i not in test]
    fold_cfg = replace(cfg, seed=cfg.seed + fold)
    params, m = train(ds.subset(train_idx), fold_cfg, pcfg)
    acc = evaluate(ds.subset(test_idx), params, _effective_pcfg(pcfg, cfg))
    return {
        "fold": fold,
        "test_accuracy": acc,
        "test_size": len(test_idx),
        "train_loss": m.train_loss,
        "train_accuracy": m.train_accuracy,
        "epoch_seconds": m.epoch_seconds,
    }


def kfold_cv(ds: GraphDataset, cfg: TrainConfig, pcfg: PoolingConfig) -> Metrics:
    """Fresh model per stratified fold; fold f trains with seed ``cfg.seed + f``."""
    parts = stratified_folds(ds.labels, cfg.folds, cfg.seed)
    jobs = [(ds, cfg, pcfg, f, idx) for f, idx in enumerate(parts)]
    if cfg.jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            results = list(pool.map(_run_fold, jobs))
    else:
        results = [_run_fold(j) for j in jobs]
    m = Metrics()
    m.fold_curves = results
    m.fold_accuracy = [r["test_accuracy"] for r in results]
    m.mean_accuracy = float(np.mean(m.fold_accuracy))
    m.std_accuracy = float(np.std(m.fold_accuracy))
    return m


# reporting -------------------------------------------------------------------

def metrics_json(metrics: Metrics, extra: dict | None = None) -> str:
    payload = dict(extra or {})
    payload["metrics"] = metrics.to_json_dict()
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def metrics_table(metrics: Metrics) -> str:
    lines = []
    if metrics.fold_accuracy:
        lines.append(f"{'fold':>4}  {'test_size':>9}  {'accuracy':>10}  {'final_loss':>12}")
        for c in metrics.fold_curves:
            lines.append(
                f"{c['fold']:>4}  {c['test_size']:>9}  {c['test_accuracy']:>10.6f}  {c['train_loss'][-1]:>12.6f}"
            )
        lines.append(f"mean accuracy {metrics.mean_accuracy:.6f} +/- {metrics.std_accuracy:.6f}")
    else:
        lines.append(f"{'epoch':>5}  {'loss':>12}  {'accuracy':>10}")
        for e, (l, a) in enumerate(zip(metrics.train_loss, metrics.train_accuracy)):
            lines.append(f"{e:>5}  {l:>12.6f}  {a:>10.6f}")
    return "\n".join(lines) + "\n"


def curves_csv(metrics: Metrics) -> str:
    rows = ["fold,epoch,train_loss,train_accuracy"]
    curves = metrics.fold_curves or [
        {"fold": 0, "train_loss": metrics.train_loss, "train_accuracy": metrics.train_accuracy}
    ]
    for c in curves:
        for e, (l, a) in enumerate(zip(c["train_loss"], c["train_accuracy"])):
            rows.append(f"{c['fold']},{e},{l!r},{a!r}")
    return "\n".join(rows) + "\n"


def write_atomic(path, text: str) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    tmp.replace(path)
