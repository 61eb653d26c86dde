"""Reverse-mode autodiff over numpy arrays.

A `Tensor` wraps a float array (channels-major, time last for sequence
data) and records a vector-Jacobian closure per op.  `backward()` walks the
tape in reverse topological order and accumulates gradients into every
tensor that requires them.  Storage defaults to float32; reductions
accumulate in float64 before casting back so repeated runs are bit-stable.
"""

from __future__ import annotations

import numpy as np

from .errors import UsageError

_GRAD_ENABLED = True


class no_grad:
    """Context manager that disables tape recording (inference mode)."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


def grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    """An array node in the autodiff graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._vjp = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data.astype(dtype), requires_grad=self.requires_grad)

    def backward(self):
        """Accumulate gradients of this scalar into the recorded graph."""
        if self.size != 1:
            raise UsageError("backward() expects a scalar loss node")
        if self._vjp is None and not self.requires_grad:
            raise UsageError("backward() without a recorded forward pass")
        if not np.isfinite(self.data):
            raise UsageError("backward() on a non-finite loss")

        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))

        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad:
                node.grad = g if node.grad is None else node.grad + g
            if node._vjp is None:
                continue
            parent_grads = node._vjp(g)
            for p, pg in zip(node._parents, parent_grads):
                if pg is None:
                    continue
                key = id(p)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # -- operator sugar -------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_wrap(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean_(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    @property
    def T(self):
        return transpose(self)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"


class Parameter:
    """Named trainable tensor; names are unique within a model."""

    __slots__ = ("name", "tensor", "trainable")

    def __init__(self, data, name: str = "", trainable: bool = True, dtype=np.float32):
        self.tensor = Tensor(np.asarray(data, dtype=dtype), requires_grad=trainable)
        self.name = name
        self.trainable = trainable

    @property
    def data(self) -> np.ndarray:
        return self.tensor.data

    @data.setter
    def data(self, value):
        self.tensor.data = np.asarray(value, dtype=self.tensor.data.dtype)

    @property
    def grad(self) -> np.ndarray | None:
        return self.tensor.grad

    def zero_grad(self):
        self.tensor.grad = None

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.data.shape}, trainable={self.trainable})"


def _wrap(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _make(data: np.ndarray, parents: tuple[Tensor, ...], vjp) -> Tensor:
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad or p._vjp is not None for p in parents):
        out._parents = parents
        out._vjp = vjp
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to `shape`."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# -- arithmetic ---------------------------------------------------------

def add(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else Tensor(a)
    b = _wrap(b, a.dtype)
    out = a.data + b.data

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(out, (a, b), vjp)


def sub(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else Tensor(a)
    b = _wrap(b, a.dtype)
    out = a.data - b.data

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(out, (a, b), vjp)


def mul(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else Tensor(a)
    b = _wrap(b, a.dtype)
    out = a.data * b.data

    def vjp(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(out, (a, b), vjp)


def div(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else Tensor(a)
    b = _wrap(b, a.dtype)
    out = a.data / b.data

    def vjp(g):
        ga = _unbroadcast(g / b.data, a.shape)
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape)
        return ga, gb

    return _make(out, (a, b), vjp)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    out = a.data @ b.data

    def vjp(g):
        return g @ b.data.T, a.data.T @ g

    return _make(out, (a, b), vjp)


def transpose(a: Tensor) -> Tensor:
    def vjp(g):
        return (g.T,)

    return _make(a.data.T, (a,), vjp)


def reshape(a: Tensor, shape) -> Tensor:
    orig = a.shape

    def vjp(g):
        return (g.reshape(orig),)

    return _make(a.data.reshape(shape), (a,), vjp)


def broadcast_to(a: Tensor, shape) -> Tensor:
    orig = a.shape

    def vjp(g):
        return (_unbroadcast(g, orig),)

    return _make(np.broadcast_to(a.data, shape).copy(), (a,), vjp)


def take_cols(a: Tensor, idx: np.ndarray) -> Tensor:
    """Gather columns (last axis) of a 2-D tensor."""
    idx = np.asarray(idx, dtype=np.intp)
    out = a.data[:, idx]

    def vjp(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga.T, idx, g.T)
        return (ga,)

    return _make(out, (a,), vjp)


# -- reductions (64-bit accumulation) -----------------------------------

def sum_(a: Tensor, axis=None, keepdims=False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims, dtype=np.float64).astype(a.dtype)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).astype(a.dtype, copy=True),)
        gx = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gx, a.shape).astype(a.dtype, copy=True),)

    return _make(out, (a,), vjp)


def mean_(a: Tensor, axis=None, keepdims=False) -> Tensor:
    if axis is None:
        n = a.size
    elif isinstance(axis, tuple):
        n = int(np.prod([a.shape[ax] for ax in axis]))
    else:
        n = a.shape[axis]
    return mul(sum_(a, axis=axis, keepdims=keepdims), 1.0 / n)


# -- elementwise nonlinearities -----------------------------------------

def relu(a: Tensor) -> Tensor:
    out = np.maximum(a.data, 0)

    def vjp(g):
        return (g * (a.data > 0),)

    return _make(out, (a,), vjp)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: Tensor) -> Tensor:
    s = _sigmoid(a.data)

    def vjp(g):
        return (g * s * (1.0 - s),)

    return _make(s, (a,), vjp)


def silu(a: Tensor) -> Tensor:
    s = _sigmoid(a.data)
    out = a.data * s

    def vjp(g):
        return (g * s * (1.0 + a.data * (1.0 - s)),)

    return _make(out, (a,), vjp)


def softplus(a: Tensor) -> Tensor:
    out = np.logaddexp(0.0, a.data).astype(a.dtype)
    s = _sigmoid(a.data)

    def vjp(g):
        return (g * s,)

    return _make(out, (a,), vjp)


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)

    def vjp(g):
        return (g * out,)

    return _make(out, (a,), vjp)


def log(a: Tensor) -> Tensor:
    out = np.log(a.data)

    def vjp(g):
        return (g / a.data,)

    return _make(out, (a,), vjp)


def square(a: Tensor) -> Tensor:
    out = a.data * a.data

    def vjp(g):
        return (g * 2.0 * a.data,)

    return _make(out, (a,), vjp)


def power(a: Tensor, p: float) -> Tensor:
    out = a.data ** p

    def vjp(g):
        return (g * p * a.data ** (p - 1.0),)

    return _make(out, (a,), vjp)


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    out = np.clip(a.data, lo, hi)
    inside = (a.data > lo) & (a.data < hi)

    def vjp(g):
        return (g * inside,)

    return _make(out, (a,), vjp)


def minimum(a: Tensor, b: Tensor) -> Tensor:
    # ties route the gradient to `a` for determinism
    take_a = a.data <= b.data
    out = np.where(take_a, a.data, b.data)

    def vjp(g):
        return _unbroadcast(g * take_a, a.shape), _unbroadcast(g * ~take_a, b.shape)

    return _make(out, (a, b), vjp)


def maximum(a: Tensor, b: Tensor) -> Tensor:
    take_a = a.data >= b.data
    out = np.where(take_a, a.data, b.data)

    def vjp(g):
        return _unbroadcast(g * take_a, a.shape), _unbroadcast(g * ~take_a, b.shape)

    return _make(out, (a, b), vjp)
