"""Dense tensors with reverse-mode automatic differentiation.

Design notes:
  * data is a numpy array, float32 by default; oracle tests build float64
    tensors, so ops must not hard-cast. Reductions accumulate in float64
    and cast back.
  * the graph is recorded only while some input requires grad, so frozen
    subnetworks build no graph at all and receive exactly zero gradient.
  * backward() consumes the graph: saved activations are dropped as each
    node is processed, and a tensor can only be backpropagated once.
"""

from __future__ import annotations

import math
from typing import Callable, Optional, Sequence

import numpy as np

DEFAULT_DTYPE = np.float32


class DimensionError(ValueError):
    """Operand shapes incompatible for the requested op."""


class DomainError(ValueError):
    """Numeric-domain violation (log/sqrt of non-positive values, ...)."""


class ContractError(ValueError):
    """An operation precondition was violated."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_ctx", "name")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: Optional[str] = None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self._ctx: Optional[tuple] = None  # (backward_fn, parents)
        self.name = name

    # -- introspection ---------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    # -- operator sugar --------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_const_like(other, self), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def __getitem__(self, key):
        return tslice(self, key)

    # -- backward --------------------------------------------------------
    def backward(self) -> None:
        """Populate .grad on every requires_grad leaf reachable from this scalar."""
        if self.data.size != 1:
            raise ContractError(f"backward requires a scalar loss, got shape {self.data.shape}")
        if not self.requires_grad:
            raise ContractError("backward on a tensor that does not require grad")

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
            if node._ctx is not None:
                for p in node._ctx[1]:
                    if p.requires_grad and id(p) not in seen:
                        stack.append((p, False))

        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._ctx is None:
                if node.requires_grad:
                    node.grad = g if node.grad is None else node.grad + g
                continue
            backward_fn, parents = node._ctx
            node._ctx = None  # release saved activations
            for parent, pg in zip(parents, backward_fn(g)):
                if pg is None or not parent.requires_grad:
                    continue
                pg = pg.astype(parent.data.dtype, copy=False)
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg


def _const_like(value, ref: Tensor) -> Tensor:
    return Tensor(np.asarray(value, dtype=ref.data.dtype))


def _make(data: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._ctx = (backward_fn, tuple(parents))
    else:
        out.requires_grad = False
        out._ctx = None
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand's shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _binary_data(a, b, opname: str):
    ta = a if isinstance(a, Tensor) else None
    tb = b if isinstance(b, Tensor) else None
    da = ta.data if ta is not None else a
    db = tb.data if tb is not None else b
    try:
        np.broadcast_shapes(np.shape(da), np.shape(db))
    except ValueError:
        raise DimensionError(f"{opname}: incompatible shapes {np.shape(da)} vs {np.shape(db)}") from None
    return ta, tb, da, db


# -- arithmetic ----------------------------------------------------------

def add(a, b) -> Tensor:
    ta, tb, da, db = _binary_data(a, b, "add")
    out = da + db
    parents = [t for t in (ta, tb) if t is not None]

    def backward(g):
        gs = []
        if ta is not None:
            gs.append(_unbroadcast(g, ta.data.shape))
        if tb is not None:
            gs.append(_unbroadcast(g, tb.data.shape))
        return gs

    return _make(out, parents, backward)


def sub(a, b) -> Tensor:
    ta, tb, da, db = _binary_data(a, b, "sub")
    out = da - db
    parents = [t for t in (ta, tb) if t is not None]

    def backward(g):
        gs = []
        if ta is not None:
            gs.append(_unbroadcast(g, ta.data.shape))
        if tb is not None:
            gs.append(_unbroadcast(-g, tb.data.shape))
        return gs

    return _make(out, parents, backward)


def mul(a, b) -> Tensor:
    ta, tb, da, db = _binary_data(a, b, "mul")
    out = da * db
    parents = [t for t in (ta, tb) if t is not None]

    def backward(g):
        gs = []
        if ta is not None:
            gs.append(_unbroadcast(g * db, ta.data.shape))
        if tb is not None:
            gs.append(_unbroadcast(g * da, tb.data.shape))
        return gs

    return _make(out, parents, backward)


def div(a, b) -> Tensor:
    ta, tb, da, db = _binary_data(a, b, "div")
    out = da / db
    parents = [t for t in (ta, tb) if t is not None]

    def backward(g):
        gs = []
        if ta is not None:
            gs.append(_unbroadcast(g / db, ta.data.shape))
        if tb is not None:
            gs.append(_unbroadcast(-g * da / (db * db), tb.data.shape))
        return gs

    return _make(out, parents, backward)


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, [a], lambda g: [-g])


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise DimensionError(f"matmul needs rank>=2 operands, got {a.data.shape} and {b.data.shape}")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise DimensionError(f"matmul: inner dims differ, {a.data.shape} vs {b.data.shape}")
    out = a.data @ b.data

    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return [_unbroadcast(ga, a.data.shape), _unbroadcast(gb, b.data.shape)]

    return _make(out, [a, b], backward)


# -- elementwise nonlinearities -------------------------------------------

def relu(a: Tensor) -> Tensor:
    out = np.maximum(a.data, 0)
    return _make(out, [a], lambda g: [g * (a.data > 0)])


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _make(out, [a], lambda g: [g * (1.0 - out * out)])


def sigmoid(a: Tensor) -> Tensor:
    out = 1.0 / (1.0 + np.exp(-a.data))
    return _make(out, [a], lambda g: [g * out * (1.0 - out)])


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _make(out, [a], lambda g: [g * out])


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        raise DomainError("log of non-positive value")
    out = np.log(a.data)
    return _make(out, [a], lambda g: [g / a.data])


def sqrt(a: Tensor) -> Tensor:
    if np.any(a.data < 0):
        raise DomainError("sqrt of negative value")
    out = np.sqrt(a.data)
    return _make(out, [a], lambda g: [g * 0.5 / np.maximum(out, 1e-30)])


def softplus(a: Tensor) -> Tensor:
    # overflow-safe: softplus(x) = max(x,0) + log1p(exp(-|x|))
    out = np.maximum(a.data, 0) + np.log1p(np.exp(-np.abs(a.data)))
    sig = 1.0 / (1.0 + np.exp(-a.data))
    return _make(out, [a], lambda g: [g * sig])


def power(a: Tensor, p: float) -> Tensor:
    if p != int(p) and np.any(a.data < 0):
        raise DomainError(f"fractional power {p} of negative value")
    out = a.data ** p
    return _make(out, [a], lambda g: [g * p * a.data ** (p - 1.0)])


# -- shape ops -------------------------------------------------------------

def reshape(a: Tensor, shape: tuple) -> Tensor:
    out = a.data.reshape(shape)
    return _make(out, [a], lambda g: [g.reshape(a.data.shape)])


def transpose(a: Tensor, axes=None) -> Tensor:
    out = np.transpose(a.data, axes)
    if axes is None:
        inv = None
    else:
        inv = tuple(np.argsort(axes))
    return _make(out, [a], lambda g: [np.transpose(g, inv)])


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ContractError("concat of zero tensors")
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise DimensionError(
            f"concat: incompatible shapes {[t.data.shape for t in tensors]} on axis {axis}"
        ) from None
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return list(np.split(g, splits, axis=axis))

    return _make(out, tensors, backward)


def tslice(a: Tensor, key) -> Tensor:
    out = a.data[key]

    def backward(g):
        full = np.zeros_like(a.data)
        full[key] = g
        return [full]

    return _make(out, [a], backward)


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Gather rows of `table` by integer id array; grads scatter-add back."""
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.data.shape[0]):
        raise DimensionError(f"embedding ids out of range for table of {table.data.shape[0]} rows")
    out = table.data[ids]

    def backward(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids, g)
        return [full]

    return _make(out, [table], backward)


def gather_last(a: Tensor, ids: np.ndarray) -> Tensor:
    """Pick one entry along the last axis per leading index (e.g. logits at target ids)."""
    ids = np.asarray(ids)
    if ids.shape != a.data.shape[:-1]:
        raise DimensionError(f"gather_last: ids shape {ids.shape} vs data {a.data.shape}")
    out = np.take_along_axis(a.data, ids[..., None], axis=-1)[..., 0]

    def backward(g):
        full = np.zeros_like(a.data)
        np.put_along_axis(full, ids[..., None], g[..., None], axis=-1)
        return [full]

    return _make(out, [a], backward)


# -- reductions -------------------------------------------------------------

def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims, dtype=np.float64).astype(a.data.dtype)

    def backward(g):
        if axis is None:
            return [np.broadcast_to(g, a.data.shape).copy()]
        if not keepdims:
            g = np.expand_dims(g, axis)
        return [np.broadcast_to(g, a.data.shape).copy()]

    return _make(out, [a], backward)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = a.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([a.data.shape[ax] for ax in axes]))
    out = a.data.mean(axis=axis, keepdims=keepdims, dtype=np.float64).astype(a.data.dtype)

    def backward(g):
        if axis is None:
            return [np.broadcast_to(g / count, a.data.shape).copy()]
        if not keepdims:
            g = np.expand_dims(g, axis)
        return [np.broadcast_to(g / count, a.data.shape).copy()]

    return _make(out, [a], backward)


# -- softmax family ----------------------------------------------------------

def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return [out * (g - dot)]

    return _make(out, [a], backward)


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse

    def backward(g):
        return [g - np.exp(out) * g.sum(axis=axis, keepdims=True)]

    return _make(out, [a], backward)


# -- composite layers ---------------------------------------------------------

def layer_norm(a: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance (no affine)."""
    mu = tmean(a, axis=-1, keepdims=True)
    centered = sub(a, mu)
    var = tmean(mul(centered, centered), axis=-1, keepdims=True)
    return mul(centered, power(add(var, eps), -0.5))


def dropout(a: Tensor, rate: float, rng) -> Tensor:
    """Inverted-scaling dropout; rate 0 is the identity and inference needs no op."""
    if not 0.0 <= rate < 1.0:
        raise ContractError(f"dropout rate {rate} outside [0, 1)")
    if rate == 0.0:
        return a
    keep = 1.0 - rate
    mask = (rng.uniform(a.data.shape) >= rate).astype(a.data.dtype) / keep
    return mul(a, Tensor(mask))
