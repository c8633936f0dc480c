"""Reverse-mode automatic differentiation over small dense graphs.

Graphs are built define-by-run: every operation evaluates its value eagerly
and records a closure that propagates gradients to its parents. `backward`
walks the graph once in reverse topological order, accumulating gradients
additively across fan-out. Values are float64 throughout.
"""

from __future__ import annotations

from typing import Iterable

import numpy as np

from .errors import NonFiniteError, ShapeError

Array = np.ndarray


def _as_array(data) -> Array:
    return np.asarray(data, dtype=np.float64)


class Tensor:
    """Graph node holding a float64 array, its gradient, and a backward rule."""

    __slots__ = ("data", "grad", "op", "_parents", "_backward")

    def __init__(self, data, parents: tuple = (), op: str = "leaf"):
        self.data = _as_array(data)
        self.grad = None
        self.op = op
        self._parents = parents
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(op={self.op}, shape={self.data.shape})"

    def __add__(self, other):
        return add(self, _wrap(other))

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, _wrap(other))

    def __rmul__(self, other):
        return mul(_wrap(other), self)

    def __neg__(self):
        return neg(self)


def tensor(data) -> Tensor:
    """Create a leaf node. Rejects NaN/Inf at the graph boundary."""
    arr = _as_array(data)
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError("leaf tensor contains NaN or Inf")
    return Tensor(arr)


def _wrap(value) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(_as_array(value))


def _unbroadcast(grad: Array, shape: tuple) -> Array:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _check_broadcast(op: str, a: Tensor, b: Tensor):
    try:
        np.broadcast_shapes(a.data.shape, b.data.shape)
    except ValueError:
        raise ShapeError(op, a.data.shape, b.data.shape) from None


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast("add", a, b)
    out = Tensor(a.data + b.data, (a, b), "add")

    def bw(g):
        a.grad += _unbroadcast(g, a.data.shape)
        b.grad += _unbroadcast(g, b.data.shape)

    out._backward = bw
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast("sub", a, b)
    out = Tensor(a.data - b.data, (a, b), "sub")

    def bw(g):
        a.grad += _unbroadcast(g, a.data.shape)
        b.grad -= _unbroadcast(g, b.data.shape)

    out._backward = bw
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast("mul", a, b)
    out = Tensor(a.data * b.data, (a, b), "mul")

    def bw(g):
        a.grad += _unbroadcast(g * b.data, a.data.shape)
        b.grad += _unbroadcast(g * a.data, b.data.shape)

    out._backward = bw
    return out


def neg(a: Tensor) -> Tensor:
    out = Tensor(-a.data, (a,), "neg")

    def bw(g):
        a.grad -= g

    out._backward = bw
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError("matmul", a.data.shape, b.data.shape)
    out = Tensor(a.data @ b.data, (a, b), "matmul")

    def bw(g):
        a.grad += g @ b.data.T
        b.grad += a.data.T @ g

    out._backward = bw
    return out


def relu(a: Tensor) -> Tensor:
    out = Tensor(np.maximum(a.data, 0.0), (a,), "relu")

    def bw(g):
        a.grad += g * (a.data > 0)

    out._backward = bw
    return out


def elu(a: Tensor) -> Tensor:
    neg_part = np.expm1(np.minimum(a.data, 0.0))
    out = Tensor(np.where(a.data > 0, a.data, neg_part), (a,), "elu")

    def bw(g):
        a.grad += g * np.where(a.data > 0, 1.0, neg_part + 1.0)

    out._backward = bw
    return out


def exp(a: Tensor) -> Tensor:
    out = Tensor(np.exp(a.data), (a,), "exp")

    def bw(g):
        a.grad += g * out.data

    out._backward = bw
    return out


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0.0):
        raise NonFiniteError("log: input must be strictly positive")
    out = Tensor(np.log(a.data), (a,), "log")

    def bw(g):
        a.grad += g / a.data

    out._backward = bw
    return out


def absolute(a: Tensor) -> Tensor:
    out = Tensor(np.abs(a.data), (a,), "abs")

    def bw(g):
        a.grad += g * np.sign(a.data)

    out._backward = bw
    return out


def reduce_sum(a: Tensor, axis: int | None = None) -> Tensor:
    out = Tensor(a.data.sum(axis=axis), (a,), "sum")

    def bw(g):
        if axis is None:
            a.grad += g * np.ones_like(a.data)
        else:
            a.grad += np.expand_dims(g, axis)

    out._backward = bw
    return out


def reduce_mean(a: Tensor, axis: int | None = None) -> Tensor:
    count = a.data.size if axis is None else a.data.shape[axis]
    out = Tensor(a.data.mean(axis=axis), (a,), "mean")

    def bw(g):
        if axis is None:
            a.grad += (g / count) * np.ones_like(a.data)
        else:
            a.grad += np.expand_dims(g, axis) / count

    out._backward = bw
    return out


def max_last(a: Tensor) -> Tensor:
    """Maximum over the last axis; subgradient routes to the first argmax."""
    if a.data.ndim < 1:
        raise ShapeError("max_last", a.data.shape)
    idx = np.argmax(a.data, axis=-1)
    out = Tensor(np.take_along_axis(a.data, idx[..., None], axis=-1)[..., 0], (a,), "max_last")

    def bw(g):
        buf = np.zeros_like(a.data)
        np.put_along_axis(buf, idx[..., None], g[..., None], axis=-1)
        a.grad += buf

    out._backward = bw
    return out


def _stable_log_softmax(z: Array) -> Array:
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax(a: Tensor) -> Tensor:
    p = np.exp(_stable_log_softmax(a.data))
    out = Tensor(p, (a,), "softmax")

    def bw(g):
        a.grad += p * (g - (g * p).sum(axis=-1, keepdims=True))

    out._backward = bw
    return out


def log_softmax(a: Tensor) -> Tensor:
    ls = _stable_log_softmax(a.data)
    out = Tensor(ls, (a,), "log_softmax")

    def bw(g):
        a.grad += g - np.exp(ls) * g.sum(axis=-1, keepdims=True)

    out._backward = bw
    return out


def cross_entropy(logits: Tensor, targets) -> Tensor:
    """Mean negative log-likelihood of integer `targets` under `logits`."""
    t = np.asarray(targets)
    if logits.data.ndim != 2 or t.shape != (logits.data.shape[0],):
        raise ShapeError("cross_entropy", logits.data.shape, t.shape)
    n, k = logits.data.shape
    if t.min() < 0 or t.max() >= k:
        raise ValueError("cross_entropy: target index out of range")
    ls = _stable_log_softmax(logits.data)
    out = Tensor(-ls[np.arange(n), t].mean(), (logits,), "cross_entropy")

    def bw(g):
        delta = np.exp(ls)
        delta[np.arange(n), t] -= 1.0
        logits.grad += (float(g) / n) * delta

    out._backward = bw
    return out


def mse(a: Tensor, b: Tensor) -> Tensor:
    """Mean squared difference over all elements."""
    if a.data.shape != b.data.shape:
        raise ShapeError("mse", a.data.shape, b.data.shape)
    diff = a.data - b.data
    out = Tensor(np.mean(diff * diff), (a, b), "mse")

    def bw(g):
        scale = 2.0 * float(g) / diff.size
        a.grad += scale * diff
        b.grad -= scale * diff

    out._backward = bw
    return out


def entropy(probs: Tensor) -> Tensor:
    """Shannon entropy of each distribution along the last axis, in nats."""
    p = probs.data
    logp = np.log(np.clip(p, 1e-300, None))
    out = Tensor(-(p * logp).sum(axis=-1), (probs,), "entropy")

    def bw(g):
        probs.grad += np.expand_dims(g, -1) * (-(logp + 1.0))

    out._backward = bw
    return out


def concat(parts: Iterable[Tensor], axis: int = 1) -> Tensor:
    parts = list(parts)
    if not parts:
        raise ValueError("concat: need at least one tensor")
    try:
        data = np.concatenate([p.data for p in parts], axis=axis)
    except ValueError:
        raise ShapeError("concat", *[p.data.shape for p in parts]) from None
    out = Tensor(data, tuple(parts), "concat")
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def bw(g):
        for part, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            part.grad += g[tuple(sl)]

    out._backward = bw
    return out


def gather_rows(a: Tensor, index) -> Tensor:
    """Select rows of a 2-D tensor; gradients scatter-add back."""
    idx = np.asarray(index)
    if a.data.ndim != 2 or idx.ndim != 1:
        raise ShapeError("gather_rows", a.data.shape, idx.shape)
    out = Tensor(a.data[idx], (a,), "gather_rows")

    def bw(g):
        np.add.at(a.grad, idx, g)

    out._backward = bw
    return out


def stop_gradient(a: Tensor) -> Tensor:
    """Pass the value through; block all gradient flow."""
    return Tensor(a.data, (), "stop_gradient")


def forward(root: Tensor) -> Array:
    """Evaluated value of the graph root (values are computed at build time)."""
    if not np.all(np.isfinite(root.data)):
        raise NonFiniteError(f"graph output of op '{root.op}' is not finite")
    return root.data


def _topo_order(root: Tensor) -> list[Tensor]:
    order, seen, stack = [], set(), [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(root: Tensor) -> None:
    """Populate grads of every node reachable from `root`.

    Seeds the root with ones, so for non-scalar roots the result is the
    gradient of sum(root). Gradients accumulate additively: leaves already
    holding a gradient (from an earlier backward) keep accumulating until
    explicitly cleared.
    """
    order = _topo_order(root)
    for node in order:
        if node.grad is None:
            node.grad = np.zeros_like(node.data)
    root.grad = root.grad + np.ones_like(root.data)
    for node in reversed(order):
        if node._backward is not None:
            node._backward(node.grad)


class ParameterStore:
    """Named trainable parameters with per-parameter Adam state."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._m: dict[str, Array] = {}
        self._v: dict[str, Array] = {}
        self._t: dict[str, int] = {}

    def add(self, name: str, values) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name: {name}")
        node = tensor(values)
        self._params[name] = node
        self._m[name] = np.zeros_like(node.data)
        self._v[name] = np.zeros_like(node.data)
        self._t[name] = 0
        return node

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def zero_grads(self) -> None:
        for p in self._params.values():
            p.grad = None

    def values(self) -> dict[str, Array]:
        """Deep copy of all parameter values (safe to share across threads)."""
        return {k: v.data.copy() for k, v in self._params.items()}

    def load_values(self, mapping: dict[str, Array]) -> None:
        """Overwrite parameter values; resets optimizer state for each name."""
        for name, values in mapping.items():
            node = self._params[name]
            arr = _as_array(values)
            if arr.shape != node.data.shape:
                raise ShapeError("load_values", node.data.shape, arr.shape)
            if not np.all(np.isfinite(arr)):
                raise NonFiniteError(f"checkpoint values for '{name}' are not finite")
            node.data = arr.copy()
            self._m[name] = np.zeros_like(arr)
            self._v[name] = np.zeros_like(arr)
            self._t[name] = 0

    def adam_step(self, learning_rate: float, beta1: float = 0.9,
                  beta2: float = 0.999, eps: float = 1e-8) -> None:
        """One Adam update for every parameter; grads are cleared afterwards.

        Parameters whose gradient was never populated are treated as having
        zero gradient (their values stay put from a fresh optimizer state,
        only the step count advances).
        """
        for name, node in self._params.items():
            g = node.grad
            if g is None:
                g = np.zeros_like(node.data)
            elif not np.all(np.isfinite(g)):
                raise NonFiniteError(f"non-finite gradient for parameter '{name}'")
            self._t[name] += 1
            t = self._t[name]
            m = self._m[name]
            v = self._v[name]
            m *= beta1
            m += (1.0 - beta1) * g
            v *= beta2
            v += (1.0 - beta2) * (g * g)
            m_hat = m / (1.0 - beta1 ** t)
            v_hat = v / (1.0 - beta2 ** t)
            node.data = node.data - learning_rate * m_hat / (np.sqrt(v_hat) + eps)
        self.zero_grads()
