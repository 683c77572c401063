"""Dense numeric primitives and the finite-difference gradient oracle."""

from __future__ import annotations

from typing import Callable, Iterator, Mapping

import numpy as np

from .errors import NumericalError, ValidationError


def relu(m: np.ndarray) -> np.ndarray:
    return np.maximum(np.asarray(m, dtype=np.float64), 0.0)


def softmax_rows(m: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max subtraction; 1-D input is treated as one row."""
    m = np.asarray(m, dtype=np.float64)
    shifted = m - m.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def sigmoid(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def xlogx(p: np.ndarray) -> np.ndarray:
    """Elementwise p*ln(p) with 0*ln(0) = 0."""
    p = np.asarray(p, dtype=np.float64)
    out = np.zeros_like(p)
    nz = p > 0
    out[nz] = p[nz] * np.log(p[nz])
    return out


def row_entropy(m: np.ndarray, tol: float = 1e-6) -> np.ndarray:
    m = np.atleast_2d(np.asarray(m, dtype=np.float64))
    if np.any(m < 0):
        raise ValidationError("row_entropy needs nonnegative entries")
    sums = m.sum(axis=1)
    if np.any(np.abs(sums - 1.0) > tol):
        raise ValidationError(f"rows must sum to 1 (worst row sum {sums[np.argmax(np.abs(sums - 1))]})")
    return -xlogx(m).sum(axis=1)


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    s = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-s, s, size=shape if shape is not None else (fan_in, fan_out))


class ParamStore(Mapping):
    """Ordered name -> float64 array mapping backed by one flat buffer.

    Each tensor is a view into ``flat`` so optimisers can update everything
    with a handful of vector operations. Shapes are frozen at construction.
    """

    def __init__(self, tensors: Mapping[str, np.ndarray] | None = None, rng_seed: int | None = None):
        arrays = {k: np.asarray(v, dtype=np.float64) for k, v in (tensors or {}).items()}
        self.rng_seed = rng_seed
        self.flat = np.empty(sum(a.size for a in arrays.values()), dtype=np.float64)
        self._t: dict[str, np.ndarray] = {}
        offset = 0
        for name, a in arrays.items():
            view = self.flat[offset:offset + a.size].reshape(a.shape)
            view[...] = a
            self._t[name] = view
            offset += a.size

    def __getitem__(self, name: str) -> np.ndarray:
        return self._t[name]

    def __setitem__(self, name: str, value) -> None:
        if name not in self._t:
            raise KeyError(f"unknown parameter {name!r}")
        value = np.asarray(value, dtype=np.float64)
        if value.shape != self._t[name].shape:
            raise ValidationError(
                f"shape of {name!r} is fixed at {self._t[name].shape}, got {value.shape}"
            )
        self._t[name][...] = value

    def __iter__(self) -> Iterator[str]:
        return iter(self._t)

    def __len__(self) -> int:
        return len(self._t)

    def __repr__(self):
        shapes = ", ".join(f"{k}: {v.shape}" for k, v in self._t.items())
        return f"ParamStore({shapes})"

    def _like(self, flat: np.ndarray) -> "ParamStore":
        out = ParamStore.__new__(ParamStore)
        out.rng_seed = self.rng_seed
        out.flat = flat
        out._t = {}
        offset = 0
        for name, a in self._t.items():
            out._t[name] = flat[offset:offset + a.size].reshape(a.shape)
            offset += a.size
        return out

    def copy(self) -> "ParamStore":
        return self._like(self.flat.copy())

    def zeros_like(self) -> "ParamStore":
        return self._like(np.zeros_like(self.flat))

    def shapes(self) -> dict:
        return {k: v.shape for k, v in self._t.items()}

    def size(self) -> int:
        return self.flat.size

    def equals(self, other: Mapping) -> bool:
        """Bitwise equality of names, shapes and values."""
        if list(self) != list(other):
            return False
        return all(np.array_equal(self[k], other[k]) for k in self)

    def all_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.flat)))


def finite_diff_grad(
    f: Callable[[ParamStore], float], params: ParamStore, eps: float = 1e-5
) -> ParamStore:
    """Central-difference gradient of scalar ``f`` at ``params``.

    Every coordinate is perturbed in place on a private copy, so ``params`` is
    never touched.
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ValidationError(f"eps must lie in [1e-7, 1e-3], got {eps}")
    work = params.copy()
    grad = params.zeros_like()
    for name in work:
        arr = work._t[name]
        g = grad._t[name]
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = float(f(work))
            flat[i] = orig - eps
            down = float(f(work))
            flat[i] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise NumericalError(f"non-finite objective while perturbing {name!r}[{i}]")
            gflat[i] = (up - down) / (2.0 * eps)
    return grad


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-6) -> float:
    """Norm-wise relative error ||a - b|| / max(||a|| + ||b||, floor).

    The floor keeps exactly-zero gradients (dead relu paths), where the
    analytic side only carries ~1e-12 rounding noise, from reading as 100%
    error.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    diff = np.linalg.norm(a - b)
    scale = np.linalg.norm(a) + np.linalg.norm(b)
    return float(diff / max(scale, floor))
