"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every operation that touches a tensor with ``requires_grad`` appends a node to
a :class:`Graph`.  Nodes are stored in creation order, so parents always come
before children and ``backward`` is a single reverse sweep over the tape.
Operations whose operands carry no graph join the current context's graph, so
independent branches of one forward pass (one per view) share a tape.  A graph
can be differentiated exactly once, after which the next forward pass starts a
fresh one.
"""

from __future__ import annotations

import contextvars
from contextlib import contextmanager
from typing import Callable, Iterator, Sequence

import numpy as np
from scipy.special import expit

from .errors import ConfigError, DimensionError, GraphStateError

Backward = Callable[[np.ndarray], Sequence["np.ndarray | None"]]

_grad_enabled: contextvars.ContextVar[bool] = contextvars.ContextVar("grad_enabled", default=True)
_current_graph: contextvars.ContextVar["Graph | None"] = contextvars.ContextVar("current_graph", default=None)


@contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording inside the block (inference, early-stopping checks)."""
    token = _grad_enabled.set(False)
    try:
        yield
    finally:
        _grad_enabled.reset(token)


class _Node:
    __slots__ = ("tag", "parents", "backward", "leaf")

    def __init__(self, tag: str, parents: tuple, backward: Backward | None, leaf: "Tensor | None" = None):
        self.tag = tag
        self.parents = parents
        self.backward = backward
        self.leaf = leaf


class Graph:
    """Append-only tape of operations.

    ``gradients`` maps node id to gradient array and is filled by :meth:`backward`.
    """

    def __init__(self) -> None:
        self.nodes: list[_Node] = []
        self.gradients: dict[int, np.ndarray] = {}
        self.consumed = False
        self._leaf_ids: dict[int, int] = {}

    def __len__(self) -> int:
        return len(self.nodes)

    def _node_of(self, t: "Tensor") -> int:
        if t._graph is self:
            return t._node
        if t._graph is not None:
            raise GraphStateError("operands belong to different graphs")
        nid = self._leaf_ids.get(id(t))
        if nid is None:
            nid = len(self.nodes)
            self.nodes.append(_Node("leaf", (), None, leaf=t))
            self._leaf_ids[id(t)] = nid
        return nid

    def _append(self, tag: str, parents: tuple, backward: Backward) -> int:
        if self.consumed:
            raise GraphStateError("graph was already differentiated; run a new forward pass")
        self.nodes.append(_Node(tag, parents, backward))
        return len(self.nodes) - 1

    def backward(self, loss: "Tensor") -> dict["Tensor", np.ndarray]:
        if loss._graph is not self:
            raise GraphStateError("loss does not belong to this graph")
        if loss.data.size != 1:
            raise DimensionError(f"backward needs a scalar loss, got shape {loss.shape}")
        if self.consumed:
            raise GraphStateError("backward was already called on this graph")
        self.consumed = True

        pending: dict[int, np.ndarray] = {loss._node: np.ones_like(loss.data)}
        result: dict[Tensor, np.ndarray] = {}
        for nid in range(loss._node, -1, -1):
            grad = pending.pop(nid, None)
            if grad is None:
                continue
            node = self.nodes[nid]
            self.gradients[nid] = grad
            if node.leaf is not None:
                node.leaf.grad = grad
                result[node.leaf] = grad
                continue
            for pid, pgrad in zip(node.parents, node.backward(grad)):
                if pid is None or pgrad is None:
                    continue
                if pid in pending:
                    pending[pid] = pending[pid] + pgrad
                else:
                    pending[pid] = pgrad
        # saved activations are no longer needed
        for node in self.nodes:
            node.backward = None
        return result


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_graph", "_node")
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.array(data, dtype=np.float64) if not isinstance(data, np.ndarray) else data.astype(np.float64, copy=False)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._graph: Graph | None = None
        self._node: int = -1

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({np.array2string(self.data, precision=4, threshold=8)}{flag})"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def graph(self) -> Graph | None:
        return self._graph

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def backward(self) -> dict["Tensor", np.ndarray]:
        return backward(self)

    # arithmetic
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)

    def relu(self):
        return relu(self)

    def sigmoid(self):
        return sigmoid(self)

    def tanh(self):
        return tanh(self)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)


def parameter(data) -> Tensor:
    """A trainable leaf tensor."""
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def backward(loss: Tensor) -> dict[Tensor, np.ndarray]:
    """Differentiate a scalar loss; returns the gradient of every reachable leaf.

    A loss that never touched a trainable tensor is a constant: its gradient map is empty.
    """
    if loss.data.size != 1:
        raise DimensionError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._graph is None:
        return {}
    return loss._graph.backward(loss)


def _result(data: np.ndarray, parents: Sequence[Tensor], fn: Backward, tag: str) -> Tensor:
    if not np.isfinite(data).all() and all(np.isfinite(p.data).all() for p in parents):
        raise FloatingPointError(f"{tag} produced non-finite values from finite inputs")
    out = Tensor(data)
    if not _grad_enabled.get() or not any(p.requires_grad for p in parents):
        return out
    graph = None
    for p in parents:
        if p._graph is not None:
            if graph is None:
                graph = p._graph
            elif p._graph is not graph:
                raise GraphStateError("operands belong to different graphs")
    if graph is None:
        graph = _current_graph.get()
        if graph is None or graph.consumed:
            graph = Graph()
            _current_graph.set(graph)
    ids = tuple(graph._node_of(p) if p.requires_grad else None for p in parents)
    out.requires_grad = True
    out._graph = graph
    out._node = graph._append(tag, ids, fn)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _result(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _result(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    return _result(
        ad * bd,
        (a, b),
        lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)),
        "mul",
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    with np.errstate(divide="ignore", invalid="ignore"):
        out = ad / bd
    return _result(
        out,
        (a, b),
        lambda g: (_unbroadcast(g / bd, ad.shape), _unbroadcast(-g * ad / (bd * bd), bd.shape)),
        "div",
    )


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _result(-a.data, (a,), lambda g: (-g,), "neg")


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        out = ad**exponent
    return _result(out, (a,), lambda g: (g * exponent * ad ** (exponent - 1),), "pow")


def exp(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    return _result(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(ad)
    return _result(out, (a,), lambda g: (g / ad,), "log")


# activations


def relu(a) -> Tensor:
    a = as_tensor(a)
    out = np.maximum(a.data, 0.0)
    return _result(out, (a,), lambda g: (g * (out > 0),), "relu")


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = expit(a.data)
    return _result(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _result(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def activation(x, kind: str) -> Tensor:
    try:
        fn = {"relu": relu, "sigmoid": sigmoid, "tanh": tanh}[kind]
    except KeyError:
        raise ConfigError(f"unknown activation {kind!r}") from None
    return fn(x)


# reductions and shape manipulation


def _normalize_axes(axis, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    axes = _normalize_axes(axis, a.ndim)

    def fn(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape),)

    return _result(np.sum(a.data, axis=axes, keepdims=keepdims), (a,), fn, "sum")


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _normalize_axes(axis, a.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    return tsum(a, axes, keepdims) * (1.0 / count)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    original = a.shape
    return _result(a.data.reshape(shape), (a,), lambda g: (g.reshape(original),), "reshape")


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    inverse = None if axes is None else tuple(np.argsort(axes))
    return _result(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inverse),), "transpose")


def getitem(a, index) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    parts = index if isinstance(index, tuple) else (index,)
    fancy = any(isinstance(p, (list, np.ndarray)) for p in parts)

    def fn(g):
        dx = np.zeros(shape)
        if fancy:
            np.add.at(dx, index, g)
        else:
            dx[index] = g
        return (dx,)

    return _result(a.data[index], (a,), fn, "getitem")


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    axis = axis % tensors[0].ndim
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _result(
        np.concatenate([t.data for t in tensors], axis=axis),
        tuple(tensors),
        lambda g: tuple(np.split(g, bounds, axis=axis)),
        "concat",
    )


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.stack([t.data for t in tensors], axis=axis)
    axis = axis % out.ndim
    return _result(
        out,
        tuple(tensors),
        lambda g: tuple(np.take(g, i, axis=axis) for i in range(len(tensors))),
        "stack",
    )


# linear algebra


def matmul(a, b) -> Tensor:
    """``a @ b`` for ``a`` of shape (..., k) and a matrix ``b`` of shape (k, n)."""
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    if bd.ndim != 2 or ad.ndim < 1 or ad.shape[-1] != bd.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {ad.shape} @ {bd.shape}")
    k, n = bd.shape

    def fn(g):
        ga = g @ bd.T
        gb = ad.reshape(-1, k).T @ g.reshape(-1, n)
        return ga, gb

    return _result(ad @ bd, (a, b), fn, "matmul")


def conv1d_channels_last(x, kernels, bias) -> Tensor:
    """Batched zero-padded, stride-1 1-D convolution on (B, T, C_in) input.

    ``kernels`` is (C_out, C_in, K) with odd K; the result is (B, T, C_out).
    Keeping time before channels lets both passes run as one contiguous matmul.
    """
    x, kernels, bias = as_tensor(x), as_tensor(kernels), as_tensor(bias)
    c_out, c_in, k = kernels.shape
    if k % 2 == 0:
        raise ConfigError(f"conv1d kernel size must be odd, got {k}")
    xd = x.data
    if xd.ndim != 3 or xd.shape[2] != c_in or bias.shape != (c_out,):
        raise DimensionError(f"conv1d shape mismatch: x {x.shape}, kernels {kernels.shape}, bias {bias.shape}")
    batch, steps, _ = xd.shape
    pad = k // 2
    padded = np.zeros((batch, steps + 2 * pad, c_in))
    padded[:, pad : pad + steps] = xd
    cols = np.concatenate([padded[:, j : j + steps] for j in range(k)], axis=2).reshape(batch * steps, k * c_in)
    wmat = kernels.data.transpose(2, 1, 0).reshape(k * c_in, c_out)
    out = (cols @ wmat + bias.data).reshape(batch, steps, c_out)

    def fn(g):
        g2 = g.reshape(batch * steps, c_out)
        gw = (cols.T @ g2).reshape(k, c_in, c_out).transpose(2, 1, 0)
        gb = g2.sum(axis=0)
        dcols = (g2 @ wmat.T).reshape(batch, steps, k, c_in)
        dpad = np.zeros((batch, steps + 2 * pad, c_in))
        for j in range(k):
            dpad[:, j : j + steps] += dcols[:, :, j]
        return dpad[:, pad : pad + steps], gw, gb

    return _result(out, (x, kernels, bias), fn, "conv1d")


def conv1d(x, kernels, bias) -> Tensor:
    """Zero-padded, stride-1 1-D convolution (cross-correlation) with odd kernels.

    ``x`` is (C_in, T) or batched (B, C_in, T); ``kernels`` is (C_out, C_in, K).
    Output keeps the input's length T: (C_out, T) or (B, C_out, T).
    """
    x = as_tensor(x)
    single = x.ndim == 2
    if single:
        x = x.reshape(1, *x.shape)
    if x.ndim != 3:
        raise DimensionError(f"conv1d expects (C_in, T) or (B, C_in, T), got {x.shape}")
    out = conv1d_channels_last(x.transpose(0, 2, 1), kernels, bias).transpose(0, 2, 1)
    return out.reshape(out.shape[1:]) if single else out


# normalisation and losses


def softmax(x, axis: int = -1, mask: np.ndarray | None = None) -> Tensor:
    """Numerically stable softmax; masked-out entries get weight exactly 0.

    The remaining entries along ``axis`` are renormalised to sum to one, so at
    least one entry per slice must be unmasked.
    """
    x = as_tensor(x)
    xd = x.data
    if mask is None:
        shifted = xd - xd.max(axis=axis, keepdims=True)
        e = np.exp(shifted)
    else:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), xd.shape)
        if not mask.any(axis=axis).all():
            raise ValueError("softmax mask leaves an empty slice")
        top = np.where(mask, xd, -np.inf).max(axis=axis, keepdims=True)
        e = np.where(mask, np.exp(np.where(mask, xd - top, 0.0)), 0.0)
    out = e / e.sum(axis=axis, keepdims=True)

    def fn(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _result(out, (x,), fn, "softmax")


def cross_entropy(logits, labels) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under ``softmax(logits)``."""
    logits = as_tensor(logits)
    xd = logits.data[None] if logits.ndim == 1 else logits.data
    labels = np.atleast_1d(np.asarray(labels))
    if xd.ndim != 2 or labels.shape != (xd.shape[0],):
        raise DimensionError(f"cross_entropy shape mismatch: logits {logits.shape}, labels {labels.shape}")
    n, c = xd.shape
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise IndexError(f"label out of range [0, {c})")
    labels = labels.astype(np.intp)
    shifted = xd - xd.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(n)
    loss = np.mean(lse - shifted[rows, labels])

    def fn(g):
        probs = np.exp(shifted - lse[:, None])
        probs[rows, labels] -= 1.0
        grad = probs * (g / n)
        return (grad[0] if logits.ndim == 1 else grad,)

    return _result(np.asarray(loss), (logits,), fn, "cross_entropy")


def mse(pred, target) -> Tensor:
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.shape != target.shape:
        raise DimensionError(f"mse shape mismatch: {pred.shape} vs {target.shape}")
    diff = pred.data - target.data
    n = diff.size

    def fn(g):
        grad = (2.0 / n) * g * diff
        return grad, -grad

    return _result(np.asarray(np.mean(diff * diff)), (pred, target), fn, "mse")
