"""Dense tensors with reverse-mode autodiff and a finite-difference checker.

Values are float64 numpy arrays computed eagerly; every op records a
backward rule so that `backward()` on a scalar loss accumulates
gradients into all reachable tensors with `requires_grad`. Gradients
accumulate across multiple uses and across repeated backward calls
until explicitly zeroed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Operand shapes incompatible for an op."""


def _as_data(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient over axes that broadcasting expanded."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    z = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z))


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_data(data)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = (
            np.zeros_like(self.data) if requires_grad else None
        )
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[], None] | None = None

    # ------------------------------------------------------------------
    # book-keeping

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def _make(self, data: np.ndarray, parents: tuple["Tensor", ...],
              backward: Callable[[], None]) -> "Tensor":
        out = Tensor(data)
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._backward = backward
        return out

    def backward(self) -> None:
        """Reverse-mode sweep from a scalar; accumulates into leaf grads."""
        if self.data.size != 1:
            raise ShapeError(
                f"backward() requires a scalar, got shape {self.data.shape}"
            )
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))
        for node in topo:
            if node.requires_grad and node.grad is None:
                node.grad = np.zeros_like(node.data)
        self.grad = self.grad + np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward()

    # ------------------------------------------------------------------
    # elementwise arithmetic (numpy broadcasting over leading axes)

    def __add__(self, other) -> "Tensor":
        other = other if isinstance(other, Tensor) else Tensor(other)
        try:
            data = self.data + other.data
        except ValueError:
            raise ShapeError(f"add: incompatible shapes {self.data.shape} and {other.data.shape}")
        a, b = self, other

        def bw():
            if a.requires_grad:
                a.grad += _unbroadcast(out.grad, a.data.shape)
            if b.requires_grad:
                b.grad += _unbroadcast(out.grad, b.data.shape)

        out = self._make(data, (a, b), bw)
        return out

    __radd__ = __add__

    def __neg__(self) -> "Tensor":
        def bw():
            if self.requires_grad:
                self.grad += -out.grad

        out = self._make(-self.data, (self,), bw)
        return out

    def __sub__(self, other) -> "Tensor":
        other = other if isinstance(other, Tensor) else Tensor(other)
        return self + (-other)

    def __rsub__(self, other) -> "Tensor":
        return (-self) + other

    def __mul__(self, other) -> "Tensor":
        other = other if isinstance(other, Tensor) else Tensor(other)
        try:
            data = self.data * other.data
        except ValueError:
            raise ShapeError(f"multiply: incompatible shapes {self.data.shape} and {other.data.shape}")
        a, b = self, other

        def bw():
            if a.requires_grad:
                a.grad += _unbroadcast(out.grad * b.data, a.data.shape)
            if b.requires_grad:
                b.grad += _unbroadcast(out.grad * a.data, b.data.shape)

        out = self._make(data, (a, b), bw)
        return out

    __rmul__ = __mul__

    # ------------------------------------------------------------------
    # linear algebra and shape ops

    def matmul(self, other: "Tensor") -> "Tensor":
        if self.data.ndim < 2 or other.data.ndim < 2:
            raise ShapeError(
                f"matmul: operands must be >= 2-d, got {self.data.shape} and {other.data.shape}"
            )
        if self.data.shape[-1] != other.data.shape[-2]:
            raise ShapeError(
                f"matmul: incompatible shapes {self.data.shape} and {other.data.shape}"
            )
        a, b = self, other

        def bw():
            g = out.grad
            if a.requires_grad:
                a.grad += _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.data.shape)
            if b.requires_grad:
                b.grad += _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.data.shape)

        out = self._make(np.matmul(self.data, other.data), (a, b), bw)
        return out

    __matmul__ = matmul

    def transpose(self, axes: Sequence[int]) -> "Tensor":
        axes = tuple(axes)
        inv = tuple(np.argsort(axes))

        def bw():
            if self.requires_grad:
                self.grad += np.transpose(out.grad, inv)

        out = self._make(np.transpose(self.data, axes), (self,), bw)
        return out

    def reshape(self, shape: Sequence[int]) -> "Tensor":
        shape = tuple(shape)

        def bw():
            if self.requires_grad:
                self.grad += out.grad.reshape(self.data.shape)

        out = self._make(self.data.reshape(shape), (self,), bw)
        return out

    def take_rows(self, indices) -> "Tensor":
        """Gather along axis 0; duplicate indices accumulate on backward."""
        idx = np.asarray(indices, dtype=np.intp)

        def bw():
            if self.requires_grad:
                np.add.at(self.grad, idx, out.grad)

        out = self._make(self.data[idx], (self,), bw)
        return out

    # ------------------------------------------------------------------
    # nonlinearities and normalizers

    def relu(self) -> "Tensor":
        def bw():
            if self.requires_grad:
                self.grad += out.grad * (self.data > 0.0)

        out = self._make(np.maximum(self.data, 0.0), (self,), bw)
        return out

    def sigmoid(self) -> "Tensor":
        s = _stable_sigmoid(self.data)

        def bw():
            if self.requires_grad:
                self.grad += out.grad * s * (1.0 - s)

        out = self._make(s, (self,), bw)
        return out

    def log(self) -> "Tensor":
        def bw():
            if self.requires_grad:
                self.grad += out.grad / self.data

        out = self._make(np.log(self.data), (self,), bw)
        return out

    def softmax(self, axis: int = -1) -> "Tensor":
        # row max subtracted before exponentiation as an overflow guard
        shifted = self.data - np.max(self.data, axis=axis, keepdims=True)
        e = np.exp(shifted)
        s = e / np.sum(e, axis=axis, keepdims=True)

        def bw():
            if self.requires_grad:
                g = out.grad
                self.grad += (g - np.sum(g * s, axis=axis, keepdims=True)) * s

        out = self._make(s, (self,), bw)
        return out

    def log_softmax(self, axis: int = -1) -> "Tensor":
        shifted = self.data - np.max(self.data, axis=axis, keepdims=True)
        lse = np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))
        ls = shifted - lse

        def bw():
            if self.requires_grad:
                g = out.grad
                self.grad += g - np.exp(ls) * np.sum(g, axis=axis, keepdims=True)

        out = self._make(ls, (self,), bw)
        return out

    def layer_norm(self, axis: int = -1, eps: float = 1e-5) -> "Tensor":
        mu = np.mean(self.data, axis=axis, keepdims=True)
        xc = self.data - mu
        var = np.mean(xc * xc, axis=axis, keepdims=True)
        inv = 1.0 / np.sqrt(var + eps)
        y = xc * inv

        def bw():
            if self.requires_grad:
                g = out.grad
                gm = np.mean(g, axis=axis, keepdims=True)
                gym = np.mean(g * y, axis=axis, keepdims=True)
                self.grad += inv * (g - gm - y * gym)

        out = self._make(y, (self,), bw)
        return out

    def dropout(self, rate: float, train: bool,
                rng: np.random.Generator | None = None) -> "Tensor":
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
        if not train or rate == 0.0:
            return self
        if rng is None:
            raise ValueError("dropout in training mode requires an explicit rng")
        mask = (rng.random(self.data.shape) >= rate) / (1.0 - rate)

        def bw():
            if self.requires_grad:
                self.grad += out.grad * mask

        out = self._make(self.data * mask, (self,), bw)
        return out

    # ------------------------------------------------------------------
    # reductions (accumulation happens in float64)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        def bw():
            if self.requires_grad:
                g = out.grad
                if axis is not None and not keepdims:
                    g = np.expand_dims(g, axis)
                self.grad += np.broadcast_to(g, self.data.shape)

        out = self._make(np.sum(self.data, axis=axis, keepdims=keepdims), (self,), bw)
        return out

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        count = self.data.size if axis is None else np.prod(
            [self.data.shape[a] for a in (axis if isinstance(axis, tuple) else (axis,))]
        )

        def bw():
            if self.requires_grad:
                g = out.grad
                if axis is not None and not keepdims:
                    g = np.expand_dims(g, axis)
                self.grad += np.broadcast_to(g, self.data.shape) / count

        out = self._make(np.mean(self.data, axis=axis, keepdims=keepdims), (self,), bw)
        return out


# ----------------------------------------------------------------------
# multi-input and functional forms

def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    """Concatenate tensors along an axis; backward splits the gradient."""
    parts = list(tensors)
    if not parts:
        raise ShapeError("concat: need at least one tensor")
    data = np.concatenate([t.data for t in parts], axis=axis)
    sizes = [t.data.shape[axis] for t in parts]
    offsets = np.cumsum(sizes)[:-1]

    def bw():
        pieces = np.split(out.grad, offsets, axis=axis)
        for t, g in zip(parts, pieces):
            if t.requires_grad:
                t.grad += g

    out = parts[0]._make(data, tuple(parts), bw)
    return out


def add(a: Tensor, b) -> Tensor:
    return a + b


def multiply(a: Tensor, b) -> Tensor:
    return a * b


def matmul(a: Tensor, b: Tensor) -> Tensor:
    return a.matmul(b)


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    return a.transpose(axes)


def embedding_lookup(table: Tensor, indices) -> Tensor:
    return table.take_rows(indices)


def relu(a: Tensor) -> Tensor:
    return a.relu()


def sigmoid(a: Tensor) -> Tensor:
    return a.sigmoid()


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    return a.softmax(axis=axis)


def layer_norm(a: Tensor, axis: int = -1, eps: float = 1e-5) -> Tensor:
    return a.layer_norm(axis=axis, eps=eps)


def dropout(a: Tensor, rate: float, train: bool,
            rng: np.random.Generator | None = None) -> Tensor:
    return a.dropout(rate, train, rng)


@dataclass(frozen=True)
class Parameter:
    """Named trainable tensor; names are unique within a model."""

    name: str
    tensor: Tensor


def finite_diff_check(
    f: Callable[[], Tensor],
    params: Sequence[Parameter],
    epsilon: float = 1e-5,
    *,
    sample_limit: int = 200,
    rng: np.random.Generator | None = None,
) -> float:
    """Compare backward() gradients of a deterministic scalar f against
    central differences.

    Every coordinate is checked when the total parameter count is within
    `sample_limit`; otherwise a random subsample is drawn, preferring
    coordinates that carry analytic gradient so real compute paths are
    exercised. Returns the max over checked coordinates of
    |g_analytic - g_numeric| / max(1e-8, |g_analytic| + |g_numeric|).
    """
    if not 1e-6 <= epsilon <= 1e-2:
        raise ValueError(f"epsilon must be in [1e-6, 1e-2], got {epsilon}")
    if rng is None:
        rng = np.random.default_rng(0)
    tensors = [p.tensor for p in params]
    for t in tensors:
        t.zero_grad()
    loss = f()
    if loss.data.size != 1:
        raise ShapeError(f"finite_diff_check: f must return a scalar, got {loss.shape}")
    if not np.isfinite(loss.data):
        raise ValueError("finite_diff_check: f returned a non-finite value")
    loss.backward()
    analytic = [t.grad.copy() for t in tensors]

    total = sum(t.data.size for t in tensors)
    if total <= sample_limit:
        coords = [(pi, fi) for pi, t in enumerate(tensors) for fi in range(t.data.size)]
    else:
        chosen: set[tuple[int, int]] = set()
        carrying = [
            (pi, fi)
            for pi, g in enumerate(analytic)
            for fi in np.flatnonzero(g.ravel())
        ]
        if carrying:
            k = min(sample_limit // 2, len(carrying))
            for s in rng.choice(len(carrying), size=k, replace=False):
                pi, fi = carrying[int(s)]
                chosen.add((pi, int(fi)))
        while len(chosen) < sample_limit:
            pi = int(rng.integers(len(tensors)))
            fi = int(rng.integers(tensors[pi].data.size))
            chosen.add((pi, fi))
        coords = sorted(chosen)

    worst = 0.0
    for pi, fi in coords:
        t = tensors[pi]
        orig = t.data.flat[fi]
        t.data.flat[fi] = orig + epsilon
        hi = float(f().data)
        t.data.flat[fi] = orig - epsilon
        lo = float(f().data)
        t.data.flat[fi] = orig
        if not (math.isfinite(hi) and math.isfinite(lo)):
            raise ValueError("finite_diff_check: f returned a non-finite value")
        g_num = (hi - lo) / (2.0 * epsilon)
        g_ana = float(analytic[pi].flat[fi])
        err = abs(g_ana - g_num) / max(1e-8, abs(g_ana) + abs(g_num))
        worst = max(worst, err)
    return worst
