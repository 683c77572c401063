import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mcgc.errors import NumericalError, ValidationError
from mcgc.numerics import (
    ParamStore,
    finite_diff_grad,
    relative_error,
    relu,
    row_entropy,
    softmax_rows,
)


def test_relu_examples(rng):
    assert np.array_equal(relu(np.array([[-1.0, 2.0]])), [[0.0, 2.0]])
    assert np.array_equal(relu(np.zeros((3, 2))), np.zeros((3, 2)))
    m = rng.normal(size=(4, 5))
    out = relu(m)
    for i in range(4):
        for j in range(5):
            assert out[i, j] == max(m[i, j], 0.0)


def test_softmax_examples():
    assert np.allclose(softmax_rows(np.array([[0.0, 0.0]])), [[0.5, 0.5]])
    assert np.allclose(softmax_rows(np.array([[math.log(2), 0.0]])), [[2 / 3, 1 / 3]], atol=1e-15)
    big = softmax_rows(np.array([[1e6, 0.0]]))
    assert np.all(np.isfinite(big))
    assert np.allclose(big, [[1.0, 0.0]])


finite = st.floats(-50, 50, allow_nan=False)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (3, 4), elements=finite), st.floats(-100, 100))
def test_softmax_rows_stochastic_and_shift_invariant(m, c):
    p = softmax_rows(m)
    assert np.all(p >= 0)
    assert np.allclose(p.sum(axis=1), 1.0, atol=1e-9)
    assert np.max(np.abs(softmax_rows(m + c) - p)) < 1e-12


def test_entropy_examples():
    assert row_entropy(np.array([[0.0, 1.0, 0.0]]))[0] == 0.0
    for k in (2, 3, 7):
        assert row_entropy(np.full((1, k), 1.0 / k))[0] == pytest.approx(math.log(k), abs=1e-12)
    assert row_entropy(np.array([[0.5, 0.5]]))[0] == pytest.approx(0.693147, abs=1e-6)


def test_entropy_rejects_bad_rows():
    with pytest.raises(ValidationError):
        row_entropy(np.array([[1.5, -0.5]]))
    with pytest.raises(ValidationError):
        row_entropy(np.array([[0.3, 0.3]]))


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (1, 5), elements=st.floats(0, 10)))
def test_entropy_maximised_by_uniform(w):
    if w.sum() <= 1e-9:
        return
    p = w / w.sum()
    assert row_entropy(p)[0] <= math.log(5) + 1e-12


def test_paramstore_shapes_and_views():
    ps = ParamStore({"a": np.ones((2, 3)), "b": np.zeros(4)}, rng_seed=1)
    assert ps.size() == 10
    assert list(ps) == ["a", "b"]
    ps["a"] = np.full((2, 3), 2.0)
    assert ps.flat[:6].tolist() == [2.0] * 6
    with pytest.raises(ValidationError):
        ps["b"] = np.zeros(5)
    with pytest.raises(KeyError):
        ps["c"] = np.zeros(1)
    c = ps.copy()
    c["b"] = np.ones(4)
    assert ps["b"].sum() == 0
    assert not c.equals(ps)
    assert c.zeros_like().flat.sum() == 0


def _scalar(v):
    return ParamStore({"x": np.array([v])})


def test_fd_square():
    g = finite_diff_grad(lambda p: float(p["x"][0] ** 2), _scalar(3.0), 1e-5)
    assert abs(g["x"][0] - 6.0) < 1e-6


def test_fd_constant():
    ps = ParamStore({"a": np.ones((2, 2)), "b": np.arange(3.0)})
    g = finite_diff_grad(lambda p: 4.2, ps, 1e-4)
    assert g.flat.tolist() == [0.0] * 7


def test_fd_quadratic_form(rng):
    m = rng.normal(size=(3, 3))
    m = m + m.T
    x = rng.normal(size=3)
    ps = ParamStore({"x": x})
    g = finite_diff_grad(lambda p: float(p["x"] @ m @ p["x"]), ps, 1e-5)
    assert np.max(np.abs(g["x"] - 2 * m @ x)) < 1e-6
    assert np.array_equal(ps["x"], x)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from([1e-3, 1e-4, 1e-5]))
def test_fd_exact_on_quadratics(seed, eps):
    rng = np.random.default_rng(seed)
    q = rng.normal(size=(4, 4))
    lin = rng.normal(size=4)
    x = rng.normal(size=4)
    f = lambda p: float(p["x"] @ q @ p["x"] + lin @ p["x"] + 1.5)
    g = finite_diff_grad(f, ParamStore({"x": x}), eps)
    assert np.max(np.abs(g["x"] - ((q + q.T) @ x + lin))) < 1e-5


def test_fd_errors():
    with pytest.raises(ValidationError):
        finite_diff_grad(lambda p: 0.0, _scalar(1.0), 1e-2)
    with pytest.raises(NumericalError, match="'x'"):
        finite_diff_grad(lambda p: float("nan"), _scalar(1.0), 1e-5)


def test_relative_error():
    assert relative_error(np.ones(3), np.ones(3)) == 0.0
    assert relative_error(np.array([1.0]), np.array([-1.0])) == pytest.approx(1.0)
    # below the floor both sides count as zero gradients
    assert relative_error(np.array([1e-12]), np.zeros(1)) < 1e-5
