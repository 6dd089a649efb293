"""Minimal reverse-mode differentiation over dense float64 arrays.

A :class:`FeatureMap` wraps an ndarray and remembers the operation that made
it. Leading axes are treated as batch axes by every operator, so a stack of
``D1 x D2`` maps moves through the graph in one call.

Only the operators the auto-encoder needs are provided.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError, StaleTapeError

__all__ = [
    "FeatureMap",
    "constant",
    "affine",
    "matmul",
    "concat",
    "relu",
    "sigmoid",
    "tanh",
    "softmax_columns",
    "softmax",
    "maxpool_rows",
    "reduce_max",
    "reduce_min",
    "norm",
    "lstm_step",
    "backward",
    "ModelParams",
    "InitRecord",
    "record_kinks",
]

_kink_log = None


@contextlib.contextmanager
def record_kinks():
    """Collect the discrete branch decisions (relu signs, argmax/argmin picks)
    taken during the forward passes inside the block.

    Finite-difference checks compare these logs to detect steps that cross a
    non-differentiable point.
    """
    global _kink_log
    prev, _kink_log = _kink_log, []
    try:
        yield _kink_log
    finally:
        _kink_log = prev


def _log_kink(arr):
    if _kink_log is not None:
        _kink_log.append(np.asarray(arr).copy())


class FeatureMap:
    """Node of the computation graph."""

    __slots__ = ("data", "grad", "_parents", "_backward", "requires_grad", "_spent", "name")

    def __init__(self, data, parents=(), backward_fn=None, requires_grad=None, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self._parents = parents
        self._backward = backward_fn
        if requires_grad is None:
            requires_grad = any(p.requires_grad for p in parents)
        self.requires_grad = requires_grad
        self._spent = False
        self.name = name

    shape = property(lambda self: self.data.shape)
    ndim = property(lambda self: self.data.ndim)

    def __repr__(self):
        return f"FeatureMap(shape={self.data.shape}, name={self.name!r})"

    def numpy(self):
        return self.data

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_lift(other)))

    def __rsub__(self, other):
        return add(_lift(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return index(self, key)

    def reshape(self, *shape):
        return reshape(self, *shape)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis, keepdims)

    @property
    def T(self):
        return swap_last(self)


def constant(x) -> FeatureMap:
    return x if isinstance(x, FeatureMap) else FeatureMap(x, requires_grad=False)


_lift = constant


def _node(data, parents, fn):
    parents = tuple(parents)
    if not any(p.requires_grad for p in parents):
        return FeatureMap(data, requires_grad=False)
    return FeatureMap(data, parents, fn, True)


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# elementwise ----------------------------------------------------------------

def add(a, b):
    a, b = _lift(a), _lift(b)
    return _node(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def neg(a):
    a = _lift(a)
    return _node(-a.data, (a,), lambda g: (-g,))


def mul(a, b):
    a, b = _lift(a), _lift(b)
    return _node(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def relu(a):
    a = _lift(a)
    mask = a.data > 0
    _log_kink(mask)
    return _node(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def sigmoid(a):
    a = _lift(a)
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _node(out, (a,), lambda g: (g * out * (1.0 - out),))


def tanh(a):
    a = _lift(a)
    out = np.tanh(a.data)
    return _node(out, (a,), lambda g: (g * (1.0 - out * out),))


# structural -----------------------------------------------------------------

def reshape(a, *shape):
    a = _lift(a)
    if len(shape) == 1 and isinstance(shape[0], tuple):
        shape = shape[0]
    old = a.shape
    return _node(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def swap_last(a):
    a = _lift(a)
    return _node(np.swapaxes(a.data, -1, -2), (a,), lambda g: (np.swapaxes(g, -1, -2),))


def index(a, key):
    a = _lift(a)
    keys = key if isinstance(key, tuple) else (key,)
    fancy = any(isinstance(k, (list, np.ndarray)) for k in keys)

    def fn(g):
        full = np.zeros_like(a.data)
        if fancy:
            np.add.at(full, key, g)
        else:
            full[key] = g
        return (full,)

    return _node(a.data[key], (a,), fn)


def concat(parts, axis=-1):
    parts = [_lift(p) for p in parts]
    sizes = [p.shape[axis] for p in parts]
    cuts = np.cumsum(sizes)[:-1]

    def fn(g):
        return tuple(np.split(g, cuts, axis=axis))

    try:
        data = np.concatenate([p.data for p in parts], axis=axis)
    except ValueError as exc:
        raise ShapeError(str(exc)) from exc
    return _node(data, parts, fn)


# linear algebra -------------------------------------------------------------

def matmul(a, b):
    a, b = _lift(a), _lift(b)
    if b.ndim < 2:
        raise ShapeError(f"matmul needs a matrix on the right, got shape {b.shape}")
    if a.ndim == 1:
        return reshape(matmul(reshape(a, (1, -1)), b), (-1,))
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")

    def fn(g):
        ga = gb = None
        if a.requires_grad:
            if b.ndim == 2:
                ga = (g.reshape(-1, g.shape[-1]) @ b.data.T).reshape(a.shape)
            else:
                ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        if b.requires_grad:
            if b.ndim == 2:
                # shared weight: fold every leading axis into one product
                gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb

    if b.ndim == 2 and a.ndim > 2:
        out = (a.data.reshape(-1, a.shape[-1]) @ b.data).reshape(a.shape[:-1] + (b.shape[-1],))
    else:
        out = a.data @ b.data
    return _node(out, (a, b), fn)


def affine(x, w, b=None):
    """Row-wise ``x @ w + b``; a 1x1 convolution over the rows of ``x``."""
    x, w = _lift(x), _lift(w)
    if w.ndim != 2 or x.shape[-1] != w.shape[0]:
        raise ShapeError(f"affine: input width {x.shape[-1:]} does not match weight {w.shape}")
    out = matmul(x, w)
    if b is not None:
        b = _lift(b)
        if b.shape != (w.shape[1],):
            raise ShapeError(f"affine: bias shape {b.shape} != ({w.shape[1]},)")
        out = add(out, b)
    return out


# reductions -----------------------------------------------------------------

def reduce_sum(a, axis=None, keepdims=False):
    a = _lift(a)
    def fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _node(a.data.sum(axis=axis, keepdims=keepdims), (a,), fn)


def reduce_mean(a, axis=None, keepdims=False):
    a = _lift(a)
    n = a.data.size if axis is None else a.shape[axis]
    return mul(reduce_sum(a, axis, keepdims), 1.0 / n)


def _arg_reduce(a, axis, pick):
    a = _lift(a)
    ax = axis % a.ndim
    idx = pick(a.data, axis=ax)  # numpy returns the first extremum, i.e. lowest index
    _log_kink(idx)
    idx_k = np.expand_dims(idx, ax)
    out = np.take_along_axis(a.data, idx_k, axis=ax).squeeze(ax)

    def fn(g):
        full = np.zeros_like(a.data)
        np.put_along_axis(full, idx_k, np.expand_dims(g, ax), axis=ax)
        return (full,)

    return _node(out, (a,), fn)


def reduce_max(a, axis=-2):
    return _arg_reduce(a, axis, np.argmax)


def reduce_min(a, axis=-1):
    return _arg_reduce(a, axis, np.argmin)


def maxpool_rows(x):
    """Column-wise maximum over the rows of a ``D1 x D2`` map (batched)."""
    x = _lift(x)
    if x.ndim < 2 or x.shape[-2] == 0:
        raise ShapeError(f"maxpool_rows needs at least one row, got shape {x.shape}")
    return reduce_max(x, axis=-2)


def softmax(s, axis):
    s = _lift(s)
    z = s.data - s.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def fn(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _node(out, (s,), fn)


def softmax_columns(s):
    """Normalize each column over the row index: ``out[:, j]`` sums to 1."""
    return softmax(s, axis=-2)


def norm(a, axis=-1):
    """Euclidean norm along ``axis``; the subgradient at zero is taken as zero."""
    a = _lift(a)
    out = np.sqrt((a.data * a.data).sum(axis=axis))

    def fn(g):
        safe = np.where(out > 0, out, 1.0)
        scale = np.where(out > 0, g / safe, 0.0)
        return (np.expand_dims(scale, axis) * a.data,)

    return _node(out, (a,), fn)


# recurrent cell -------------------------------------------------------------

def lstm_step(state, x, params):
    """One LSTM update with gate order (input, forget, candidate, output).

    ``params`` maps ``W_x`` (in x 4H), ``W_h`` (H x 4H) and ``b`` (4H,).
    """
    h, c = (_lift(s) for s in state)
    x = _lift(x)
    w_x, w_h, b = _lift(params["W_x"]), _lift(params["W_h"]), _lift(params["b"])
    hidden = w_h.shape[0]
    if w_x.shape[1] != 4 * hidden or h.shape[-1] != hidden or c.shape[-1] != hidden:
        raise ShapeError(f"lstm_step: state width {h.shape[-1]} / weights {w_x.shape}, {w_h.shape}")
    z = affine(x, w_x) + affine(h, w_h, b)
    H = hidden
    i = sigmoid(z[..., 0:H])
    f = sigmoid(z[..., H:2 * H])
    cand = tanh(z[..., 2 * H:3 * H])
    o = sigmoid(z[..., 3 * H:4 * H])
    c_new = f * c + i * cand
    h_new = o * tanh(c_new)
    return h_new, c_new


# backward -------------------------------------------------------------------

def _topo(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        if node._spent:
            raise StaleTapeError("backward() already ran on this graph; run the forward pass again")
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss, leaves=None):
    """Accumulate d(loss)/d(node) into ``.grad`` for every node that needs it.

    ``leaves`` is an optional mapping name -> leaf FeatureMap; when given, a
    dict name -> gradient array is returned, zero-filled for leaves that the
    loss does not reach. The graph is released afterwards, so a second call
    on the same loss raises :class:`StaleTapeError`.
    """
    if loss._spent:
        raise StaleTapeError("backward() already ran on this graph; run the forward pass again")
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if leaves is not None:
        for leaf in leaves.values():
            leaf.grad = None
    order = _topo(loss)
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is None or node.grad is None:
            continue
        grads = node._backward(node.grad)
        for p, g in zip(node._parents, grads):
            if not p.requires_grad or g is None:
                continue
            p.grad = g if p.grad is None else p.grad + g
    for node in order:
        if node._backward is not None:
            node._backward = None
            node._parents = ()
            node._spent = True
            if node is not loss:
                node.grad = None
    if leaves is None:
        return None
    return {k: (v.grad if v.grad is not None else np.zeros_like(v.data)) for k, v in leaves.items()}


# parameters -----------------------------------------------------------------

@dataclass(frozen=True)
class InitRecord:
    scheme: str
    seed: int
    value: float = 0.0


@dataclass
class ModelParams:
    """Named float64 arrays with their initialization records."""

    arrays: dict = field(default_factory=dict)
    inits: dict = field(default_factory=dict)

    def add(self, name, shape, scheme, rng, seed, value=0.0):
        if name in self.arrays:
            raise ValueError(f"duplicate parameter {name!r}")
        shape = tuple(int(s) for s in shape)
        if scheme == "xavier_uniform":
            fan_in, fan_out = shape[0], shape[-1]
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            arr = rng.uniform(-limit, limit, size=shape)
        elif scheme == "zeros":
            arr = np.zeros(shape)
        elif scheme == "constant":
            arr = np.full(shape, float(value))
        elif scheme == "lstm_bias":
            hidden = shape[0] // 4
            arr = np.zeros(shape)
            arr[hidden:2 * hidden] = value
        else:
            raise ValueError(f"unknown init scheme {scheme!r}")
        self.arrays[name] = arr.astype(np.float64)
        self.inits[name] = InitRecord(scheme, seed, float(value))
        return self.arrays[name]

    def __getitem__(self, name):
        return self.arrays[name]

    def __contains__(self, name):
        return name in self.arrays

    def __iter__(self):
        return iter(self.arrays)

    def __len__(self):
        return len(self.arrays)

    def names(self):
        return list(self.arrays)

    def leaves(self):
        """Fresh graph leaves for one forward/backward pass."""
        return {k: FeatureMap(v, requires_grad=True, name=k) for k, v in self.arrays.items()}

    def frozen(self):
        """Constant (non-differentiable) views for inference."""
        return {k: FeatureMap(v, requires_grad=False, name=k) for k, v in self.arrays.items()}

    def copy(self):
        return ModelParams({k: v.copy() for k, v in self.arrays.items()}, dict(self.inits))

    def n_values(self):
        return sum(v.size for v in self.arrays.values())
