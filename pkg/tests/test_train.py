import math
import warnings

import numpy as np
import pytest

from mcgc.errors import ValidationError
from mcgc.graph import Graph, GraphDataset
from mcgc.model import PoolingConfig, init_params
from mcgc.numerics import ParamStore
from mcgc.train import (
    Adam,
    SGD,
    TrainConfig,
    curves_csv,
    evaluate_accuracy,
    kfold_cv,
    metrics_json,
    metrics_table,
    stratified_folds,
    train,
)

from conftest import random_graph

TINY = PoolingConfig(layers=1, hops=2, dim=6, cluster_sizes=(2,))


def blob_dataset(n=20, seed=0):
    """Single-node graphs whose 2-d feature sits near (1, 0) for class 0 and (0, 1) for class 1."""
    rng = np.random.default_rng(seed)
    graphs = []
    for i in range(n):
        label = i % 2
        centre = np.array([1.0, 0.0]) if label == 0 else np.array([0.0, 1.0])
        x = np.clip(centre + rng.normal(scale=0.1, size=2), 0, None)
        graphs.append(Graph(np.zeros((1, 1)), x[None, :], label))
    return GraphDataset("blobs", graphs, 2)


def small_graph_dataset(n=12, seed=0):
    rng = np.random.default_rng(seed)
    graphs = [random_graph(rng, int(rng.integers(3, 7)), f=3, label=i % 2) for i in range(n)]
    return GraphDataset("small", graphs, 2)


def test_accuracy_examples():
    assert evaluate_accuracy([1, 0, 1], [1, 0, 1]) == 1.0
    assert evaluate_accuracy([0, 0], [1, 1]) == 0.0
    assert evaluate_accuracy([1, 1, 0, 0], [1, 1, 0, 1]) == 0.75


def test_accuracy_errors():
    with pytest.raises(ValidationError):
        evaluate_accuracy([1], [1, 0])
    with pytest.raises(ValidationError):
        evaluate_accuracy([], [])


@pytest.mark.parametrize("kw", [
    dict(learning_rate=-0.1), dict(epochs=0), dict(folds=1), dict(optimizer="rmsprop"), dict(batch_size=0),
])
def test_train_config_validation(kw):
    with pytest.raises(ValidationError):
        TrainConfig(**kw)


def test_sgd_step():
    ps = ParamStore({"x": np.array([1.0, 2.0])})
    SGD(ps, 0.5).step(ParamStore({"x": np.array([2.0, -2.0])}))
    assert ps["x"].tolist() == [0.0, 3.0]


def test_adam_three_step_trajectory():
    """Scalar f(x) = x^2 from x = 1 with lr 0.1, recomputed with the textbook recurrence."""
    ps = ParamStore({"x": np.array([1.0])})
    opt = Adam(ps, 0.1)
    x, m, v = 1.0, 0.0, 0.0
    for t in range(1, 4):
        g = 2 * x
        opt.step(ParamStore({"x": np.array([g])}))
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        x -= 0.1 * (m / (1 - 0.9 ** t)) / (math.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
        assert ps["x"][0] == pytest.approx(x, abs=1e-12)
    # each early step moves by about lr: 1.0 -> 0.9 -> 0.8 -> 0.7016
    assert ps["x"][0] == pytest.approx(0.70159, abs=1e-5)


def test_train_deterministic():
    ds = small_graph_dataset()
    cfg = TrainConfig(learning_rate=0.01, epochs=3, seed=5)
    p1, m1 = train(ds, cfg, TINY)
    p2, m2 = train(ds, cfg, TINY)
    assert p1.flat.tobytes() == p2.flat.tobytes()
    assert m1.train_loss == m2.train_loss


def test_zero_learning_rate_keeps_params():
    ds = small_graph_dataset()
    start = init_params(TINY, 3, 2, seed=9)
    for opt in ("adam", "sgd"):
        out, _ = train(ds, TrainConfig(learning_rate=0.0, epochs=4, seed=9, optimizer=opt), TINY, start)
        assert out.equals(start)


def test_batch_accumulation_runs():
    ds = small_graph_dataset()
    _, m = train(ds, TrainConfig(learning_rate=0.01, epochs=2, batch_size=5), TINY)
    assert len(m.train_loss) == 2 and all(math.isfinite(x) for x in m.train_loss)


def test_blobs_reach_full_train_accuracy():
    ds = blob_dataset()
    _, m = train(ds, TrainConfig(learning_rate=0.01, epochs=50, seed=0), TINY)
    assert max(m.train_accuracy) == 1.0


def test_folds_partition():
    labels = [0] * 13 + [1] * 7
    parts = stratified_folds(labels, 5, seed=3)
    flat = [i for p in parts for i in p]
    assert sorted(flat) == list(range(20))
    sizes = [len(p) for p in parts]
    assert max(sizes) - min(sizes) <= 1
    for c in (0, 1):
        per = [sum(labels[i] == c for i in p) for p in parts]
        assert max(per) - min(per) <= 1
    assert stratified_folds(labels, 5, seed=3) == parts
    assert stratified_folds(labels, 5, seed=4) != parts


def test_folds_leave_one_out():
    labels = [0] * 5 + [1] * 5
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        parts = stratified_folds(labels, 10, seed=0)
    assert sorted(len(p) for p in parts) == [1] * 10
    assert sorted(i for p in parts for i in p) == list(range(10))


def test_folds_small_class_rejected():
    with pytest.raises(ValidationError, match="class 1"):
        stratified_folds([0] * 10 + [1] * 2, 5, seed=0)


def test_folds_singleton_class_warns():
    with pytest.warns(UserWarning):
        stratified_folds([0, 0, 0, 1], 4, seed=0)


def test_kfold_cv_and_reports():
    ds = small_graph_dataset(12)
    cfg = TrainConfig(learning_rate=0.01, epochs=2, folds=3, seed=1)
    m = kfold_cv(ds, cfg, TINY)
    assert len(m.fold_accuracy) == 3
    assert all(0 <= a <= 1 for a in m.fold_accuracy)
    assert m.mean_accuracy == pytest.approx(np.mean(m.fold_accuracy))
    again = kfold_cv(ds, cfg, TINY)
    assert metrics_json(m) == metrics_json(again)
    assert "epoch_seconds" not in metrics_json(m)
    assert "mean accuracy" in metrics_table(m)
    assert curves_csv(m).count("\n") == 1 + 3 * 2
