"""Dense real tensors with reverse-mode gradients.

Only the primitives needed by the set-attention models are provided. Every
primitive records a closure that maps the output gradient to gradients for
its inputs; :meth:`Tensor.backward` replays those closures in reverse
topological order.
"""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

DEFAULT_DTYPE = np.float64

_record_graph = True


@contextmanager
def no_grad():
    """Compute forward values without recording a graph."""
    global _record_graph
    saved, _record_graph = _record_graph, False
    try:
        yield
    finally:
        _record_graph = saved


class Tensor:
    """An ndarray plus the bookkeeping needed for backpropagation."""

    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, name=None, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype.kind != "f":
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.name = name
        self.grad = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None

    @classmethod
    def from_op(cls, data, parents: Sequence["Tensor"], backward: Callable):
        """Build the output of a primitive.

        ``backward(g)`` must return one gradient (or ``None``) per parent.
        The graph is only recorded when some parent needs a gradient and
        recording is not switched off by :func:`no_grad`.
        """
        out = cls(data)
        if _record_graph and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        return out

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def T(self):
        return transpose(self)

    def numpy(self):
        return self.data

    def item(self):
        return self.data.item()

    def __repr__(self):
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, scale(as_tensor(other, self.dtype), -1.0))

    def __rsub__(self, other):
        return add(as_tensor(other, self.dtype), scale(self, -1.0))

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, other)
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if not np.isscalar(other):
            raise TypeError("only division by a scalar is supported")
        return scale(self, 1.0 / other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def backward(self, grad=None, retain_graph=False):
        """Accumulate d(self)/d(leaf) into every leaf that requires a gradient.

        Each node drops its closure once used, so intermediate arrays are
        freed during the pass; ``retain_graph=True`` keeps them for a rerun.
        """
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a seed gradient needs a scalar")
            grad = np.ones_like(self.data)
        order = _topological_order(self)
        pending = {id(self): np.asarray(grad, dtype=self.dtype)}
        for node in reversed(order):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            grads = node._backward(g)
            parents = node._parents
            if not retain_graph:
                node._backward, node._parents = None, ()
            for parent, pg in zip(parents, grads):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                pending[key] = pending[key] + pg if key in pending else pg


class Parameter(Tensor):
    """A learnable leaf tensor whose gradient buffer always exists."""

    def __init__(self, data, name=None, trainable=True, dtype=None):
        super().__init__(np.array(data, copy=True), requires_grad=trainable, name=name, dtype=dtype)
        self.trainable = bool(trainable)
        self.grad = np.zeros_like(self.data)

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)


def _topological_order(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _swap_last(a):
    return np.swapaxes(a, -1, -2)


# ---------------------------------------------------------------------------
# primitives


def matmul(a, b) -> Tensor:
    """Batched matrix product over the last two axes (numpy broadcasting)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul operands need at least two axes")
    out = np.matmul(a.data, b.data)

    def backward(g):
        ga = _unbroadcast(np.matmul(g, _swap_last(b.data)), a.shape) if a.requires_grad else None
        gb = _unbroadcast(np.matmul(_swap_last(a.data), g), b.shape) if b.requires_grad else None
        return ga, gb

    return Tensor.from_op(out, (a, b), backward)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor.from_op(out, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data

    def backward(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return Tensor.from_op(out, (a, b), backward)


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    out = a.data * c

    def backward(g):
        return (g * c,)

    return Tensor.from_op(out, (a,), backward)


def _stable_sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    s = _stable_sigmoid(a.data)

    def backward(g):
        return (g * s * (1.0 - s),)

    return Tensor.from_op(s, (a,), backward)


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    out = np.where(mask, a.data, 0.0).astype(a.dtype, copy=False)

    def backward(g):
        return (g * mask,)

    return Tensor.from_op(out, (a,), backward)


def activation(name: str) -> Callable[[Tensor], Tensor]:
    table = {"sigmoid": sigmoid, "relu": relu, "identity": lambda t: t}
    try:
        return table[name]
    except KeyError:
        raise ValueError(f"unknown activation {name!r}; expected one of {sorted(table)}") from None


def softmax_rows(logits) -> Tensor:
    """Softmax over the last axis, stabilised by per-row max subtraction."""
    logits = as_tensor(logits)
    x = logits.data
    if not np.all(np.isfinite(x)):
        bad = tuple(int(i) for i in np.argwhere(~np.isfinite(x))[0])
        raise FloatingPointError(f"softmax_rows: non-finite logit at index {bad}")
    s = x - x.max(axis=-1, keepdims=True)
    np.exp(s, out=s)
    s /= s.sum(axis=-1, keepdims=True)

    def backward(g):
        gs = g * s
        gs -= s * gs.sum(axis=-1, keepdims=True)
        return (gs,)

    return Tensor.from_op(s, (logits,), backward)


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalise each row over the last (feature) axis, then apply gain and bias."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data

    def backward(g):
        gx = ggain = gbias = None
        if x.requires_grad:
            d = g * gain.data
            gx = inv * (d - d.mean(axis=-1, keepdims=True)
                        - xhat * (d * xhat).mean(axis=-1, keepdims=True))
        if gain.requires_grad:
            ggain = _unbroadcast(g * xhat, gain.shape)
        if bias.requires_grad:
            gbias = _unbroadcast(g, bias.shape)
        return gx, ggain, gbias

    return Tensor.from_op(out, (x, gain, bias), backward)


def batch_norm(x, gain, bias, running_mean, running_var, *, training: bool,
               momentum: float = 0.1, eps: float = 1e-5) -> Tensor:
    """Per-channel normalisation; the channel axis is the last axis.

    In training mode statistics are taken over every other axis and the
    running buffers (plain ndarrays, updated in place) track them with the
    given momentum; the running variance uses the unbiased estimate. In
    evaluation mode the running buffers are used as-is.
    """
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    axes = tuple(range(x.ndim - 1))
    if training:
        count = int(np.prod([x.shape[i] for i in axes]))
        mu = x.data.mean(axis=axes, keepdims=True)
        xc = x.data - mu
        var = (xc * xc).mean(axis=axes, keepdims=True)
        inv = 1.0 / np.sqrt(var + eps)
        unbiased = var * count / max(count - 1, 1)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu.reshape(running_mean.shape)
        running_var *= 1.0 - momentum
        running_var += momentum * unbiased.reshape(running_var.shape)
    else:
        xc = x.data - running_mean
        inv = 1.0 / np.sqrt(running_var + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data

    def backward(g):
        gx = None
        if x.requires_grad:
            d = g * gain.data
            if training:
                gx = inv * (d - d.mean(axis=axes, keepdims=True)
                            - xhat * (d * xhat).mean(axis=axes, keepdims=True))
            else:
                gx = d * inv
        ggain = _unbroadcast(g * xhat, gain.shape) if gain.requires_grad else None
        gbias = _unbroadcast(g, bias.shape) if bias.requires_grad else None
        return gx, ggain, gbias

    return Tensor.from_op(out, (x, gain, bias), backward)


def sum_(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return Tensor.from_op(out, (a,), backward)


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        n = a.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = int(np.prod([a.shape[i] for i in axes]))
    return scale(sum_(a, axis, keepdims), 1.0 / n)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    out = a.data.reshape(shape)

    def backward(g):
        return (g.reshape(a.shape),)

    return Tensor.from_op(out, (a,), backward)


def transpose(a, axes=None) -> Tensor:
    """Permute axes; by default swap the last two."""
    a = as_tensor(a)
    if axes is None:
        axes = tuple(range(a.ndim - 2)) + (a.ndim - 1, a.ndim - 2)
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    out = np.transpose(a.data, axes)

    def backward(g):
        return (np.transpose(g, inverse),)

    return Tensor.from_op(out, (a,), backward)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return Tensor.from_op(out, tuple(tensors), backward)


def split(a, parts: int, axis: int = -1) -> list[Tensor]:
    """Split into ``parts`` equal pieces along ``axis`` (used for heads)."""
    a = as_tensor(a)
    n = a.shape[axis]
    if n % parts:
        raise ValueError(f"axis of length {n} is not divisible into {parts} parts")
    w = n // parts
    pieces = []
    for i in range(parts):
        index = [slice(None)] * a.ndim
        index[axis] = slice(i * w, (i + 1) * w)
        index = tuple(index)

        def backward(g, index=index):
            full = np.zeros_like(a.data)
            full[index] = g
            return (full,)

        pieces.append(Tensor.from_op(a.data[index], (a,), backward))
    return pieces


def take(a, indices, axis: int) -> Tensor:
    """Gather slices ``indices`` (1-D ints) along ``axis``."""
    a = as_tensor(a)
    idx = np.asarray(indices, dtype=np.intp)
    out = np.take(a.data, idx, axis=axis)

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(np.moveaxis(full, axis, 0), idx, np.moveaxis(g, axis, 0))
        return (full,)

    return Tensor.from_op(out, (a,), backward)


# ---------------------------------------------------------------------------
# finite-difference verification


@dataclass
class GradCheckReport:
    parameter: str
    max_relative_error: float
    tolerance: float
    passed: bool


def gradient_check(loss_fn: Callable[[], Tensor], inputs: Mapping[str, Tensor],
                   perturbation: float = 1e-5, tolerance: float = 1e-4) -> list[GradCheckReport]:
    """Compare reverse-mode gradients of ``loss_fn()`` with central differences.

    ``loss_fn`` must be a deterministic zero-argument callable returning a
    scalar Tensor built from ``inputs``. Relative error per entry uses the
    denominator ``max(|analytic|, |numeric|, 1e-12)``. The default step sits
    near eps**(1/3), where truncation and rounding errors of a central
    difference balance in float64.
    """
    if not 1e-7 <= perturbation <= 1e-4:
        raise ValueError("perturbation must lie in [1e-7, 1e-4]")
    for name, t in inputs.items():
        if t.dtype != np.float64:
            raise TypeError(f"gradient check needs float64 tensors; {name!r} is {t.dtype}")

    first = loss_fn().data.copy()
    again = loss_fn().data.copy()
    if not np.array_equal(first, again):
        raise RuntimeError("loss_fn is not deterministic; fix every random seed before checking gradients")

    for t in inputs.values():
        t.grad = np.zeros_like(t.data)
    loss_fn().backward()
    analytic = {name: t.grad.copy() for name, t in inputs.items()}

    reports = []
    for name, t in inputs.items():
        flat = t.data.reshape(-1)
        numeric = np.empty(flat.size)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + perturbation
            up = float(loss_fn().data)
            flat[i] = orig - perturbation
            down = float(loss_fn().data)
            flat[i] = orig
            numeric[i] = (up - down) / (2.0 * perturbation)
        a = analytic[name].reshape(-1)
        denom = np.maximum(np.maximum(np.abs(a), np.abs(numeric)), 1e-12)
        err = float(np.max(np.abs(a - numeric) / denom)) if flat.size else 0.0
        reports.append(GradCheckReport(name, err, tolerance, err <= tolerance))
    for t in inputs.values():
        t.grad = np.zeros_like(t.data)
    return reports

