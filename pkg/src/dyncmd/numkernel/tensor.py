"""Define-by-run fp64 tensors with reverse-mode gradients.

Every op checks its output for NaN/Inf and raises :class:`NonFiniteError`
instead of propagating. Ops only record onto a :class:`Graph` when one is
active and at least one input requires a gradient; outside a graph the same
functions run as plain numpy inference.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "Graph",
    "NonFiniteError",
    "ShapeError",
    "as_tensor",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "matmul",
    "exp",
    "log",
    "tanh",
    "elu",
    "square",
    "sqrt",
    "sum",
    "mean",
    "amax",
    "minimum",
    "clip",
    "reshape",
    "transpose",
    "swapaxes",
    "concat",
    "getitem",
    "softmax",
    "layer_norm",
    "linear",
]


class NonFiniteError(FloatingPointError):
    """Raised when an op produces NaN or Inf."""


class ShapeError(ValueError):
    """Raised on incompatible operand shapes."""


_GRAPH_STACK: list["Graph"] = []


class Tensor:
    """An fp64 array plus the bookkeeping needed for reverse-mode AD."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=np.float64)
        if not np.isfinite(arr).all():
            raise NonFiniteError(f"non-finite value in tensor {name or ''}".strip())
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None
        self.op = "leaf"
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


class Graph:
    """Tape of recorded ops plus a registry of named parameter leaves.

    Use as a context manager; ops created inside the ``with`` block are
    appended in construction order, which is also a valid topological order.
    """

    def __init__(self):
        self.nodes: list[Tensor] = []
        self.params: dict[str, Tensor] = {}

    def __enter__(self) -> "Graph":
        _GRAPH_STACK.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _GRAPH_STACK.remove(self)

    def param(self, name: str, value) -> Tensor:
        if name in self.params:
            raise KeyError(f"parameter {name!r} registered twice")
        t = Tensor(value, requires_grad=True, name=name)
        self.params[name] = t
        return t

    def params_from(self, arrays: dict[str, np.ndarray]) -> dict[str, Tensor]:
        return {k: self.param(k, v) for k, v in arrays.items()}

    def backward(self, loss: Tensor, seed: np.ndarray | None = None) -> None:
        if seed is None:
            if loss.data.size != 1:
                raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
            seed = np.ones_like(loss.data)
        loss.grad = np.array(seed, dtype=np.float64).reshape(loss.shape)
        for node in reversed(self.nodes):
            if node.grad is not None and node._backward is not None:
                node._backward(node.grad)
        for name, p in self.params.items():
            if p.grad is None:
                p.grad = np.zeros_like(p.data)
            elif not np.isfinite(p.grad).all():
                raise NonFiniteError(f"non-finite gradient for {name}")

    def grads(self) -> dict[str, np.ndarray]:
        return {k: (p.grad if p.grad is not None else np.zeros_like(p.data)) for k, p in self.params.items()}


def active_graph() -> Graph | None:
    return _GRAPH_STACK[-1] if _GRAPH_STACK else None


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, parents: tuple[Tensor, ...], backward, op: str) -> Tensor:
    if not np.isfinite(data).all():
        raise NonFiniteError(f"non-finite output from {op}")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = False
    out._parents = ()
    out._backward = None
    out.op = op
    out.name = None
    graph = active_graph()
    if graph is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
        graph.nodes.append(out)
    return out


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64, copy=True)
    else:
        t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# elementwise binary -----------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(g, b.shape))

    return _result(a.data + b.data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(-g, b.shape))

    return _result(a.data - b.data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g * a.data, b.shape))

    return _result(a.data * b.data, (a, b), backward, "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data

    def backward(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(-g * out / b.data, b.shape))

    return _result(out, (a, b), backward, "div")


def minimum(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    pick_a = a.data <= b.data

    def backward(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(np.where(pick_a, g, 0.0), a.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(np.where(pick_a, 0.0, g), b.shape))

    return _result(np.minimum(a.data, b.data), (a, b), backward, "minimum")


# elementwise unary ------------------------------------------------------------

def neg(a) -> Tensor:
    a = as_tensor(a)
    return _result(-a.data, (a,), lambda g: _accum(a, -g), "neg")


def exp(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    return _result(out, (a,), lambda g: _accum(a, g * out), "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a.data)
    return _result(out, (a,), lambda g: _accum(a, g / a.data), "log")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _result(out, (a,), lambda g: _accum(a, g * (1.0 - out * out)), "tanh")


def elu(a) -> Tensor:
    a = as_tensor(a)
    pos = a.data > 0
    neg_part = np.exp(np.minimum(a.data, 0.0))
    out = np.where(pos, a.data, neg_part - 1.0)
    return _result(out, (a,), lambda g: _accum(a, g * np.where(pos, 1.0, neg_part)), "elu")


def square(a) -> Tensor:
    a = as_tensor(a)
    return _result(a.data * a.data, (a,), lambda g: _accum(a, 2.0 * g * a.data), "square")


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(invalid="ignore"):
        out = np.sqrt(a.data)
    with np.errstate(divide="ignore"):
        return _result(out, (a,), lambda g: _accum(a, 0.5 * g / out), "sqrt")


def clip(a, lo: float, hi: float) -> Tensor:
    """Clamp to ``[lo, hi]``; gradient flows only where the input is inside."""
    a = as_tensor(a)
    inside = (a.data >= lo) & (a.data <= hi)
    return _result(np.clip(a.data, lo, hi), (a,), lambda g: _accum(a, np.where(inside, g, 0.0)), "clip")


# reductions -------------------------------------------------------------------

def _expand_reduced(g: np.ndarray, shape, axis, keepdims: bool) -> np.ndarray:
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    out = np.asarray(a.data.sum(axis=axis, keepdims=keepdims))
    return _result(out, (a,), lambda g: _accum(a, _expand_reduced(g, a.shape, axis, keepdims)), "sum")


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    out = np.asarray(a.data.mean(axis=axis, keepdims=keepdims))
    return _result(out, (a,), lambda g: _accum(a, _expand_reduced(g, a.shape, axis, keepdims) / n), "mean")


def amax(a, axis: int) -> Tensor:
    """Max along one axis; the gradient goes to the first maximizing index."""
    a = as_tensor(a)
    idx = np.expand_dims(np.argmax(a.data, axis=axis), axis)
    out = np.take_along_axis(a.data, idx, axis=axis).squeeze(axis)

    def backward(g):
        full = np.zeros_like(a.data)
        np.put_along_axis(full, idx, np.expand_dims(g, axis), axis=axis)
        _accum(a, full)

    return _result(out, (a,), backward, "amax")


# shape ops --------------------------------------------------------------------

def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return _result(a.data.reshape(shape), (a,), lambda g: _accum(a, g.reshape(a.shape)), "reshape")


def transpose(a, axes) -> Tensor:
    a = as_tensor(a)
    inv = np.argsort(axes)
    return _result(a.data.transpose(axes), (a,), lambda g: _accum(a, g.transpose(inv)), "transpose")


def swapaxes(a, ax1: int, ax2: int) -> Tensor:
    a = as_tensor(a)
    return _result(np.swapaxes(a.data, ax1, ax2), (a,), lambda g: _accum(a, np.swapaxes(g, ax1, ax2)), "swapaxes")


def concat(tensors, axis: int = -1) -> Tensor:
    ts = tuple(as_tensor(t) for t in tensors)
    sizes = [t.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        for t, part in zip(ts, np.split(g, splits, axis=axis)):
            _accum(t, part)

    return _result(np.concatenate([t.data for t in ts], axis=axis), ts, backward, "concat")


def getitem(a, idx) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        _accum(a, full)

    return _result(np.array(a.data[idx], dtype=np.float64), (a,), backward, "getitem")


# linear algebra ---------------------------------------------------------------

def matmul(a, b) -> Tensor:
    """Batched matrix product ``a @ b`` with numpy broadcasting over leading axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs >=2-d operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError as err:
        raise ShapeError(str(err)) from None

    def backward(g):
        if a.requires_grad:
            if b.ndim == 2:
                ga = g @ b.data.T
            else:
                ga = g @ np.swapaxes(b.data, -1, -2)
            _accum(a, _unbroadcast(ga, a.shape))
        if b.requires_grad:
            if b.ndim == 2:
                k, n = b.shape
                gb = a.data.reshape(-1, k).T @ np.broadcast_to(g, out.shape).reshape(-1, n)
                _accum(b, gb)
            else:
                gb = np.swapaxes(a.data, -1, -2) @ g
                _accum(b, _unbroadcast(gb, b.shape))

    return _result(out, (a, b), backward, "matmul")


def linear(x, weight, bias=None) -> Tensor:
    x = as_tensor(x)
    if x.ndim == 1:
        y = reshape(matmul(reshape(x, (1, x.shape[0])), weight), (-1,))
        return y if bias is None else add(y, bias)
    y = matmul(x, weight)
    return y if bias is None else add(y, bias)


# normalizers ------------------------------------------------------------------

def softmax(a, mask: np.ndarray | None = None) -> Tensor:
    """Softmax over the last axis.

    ``mask`` is a boolean allow-mask broadcastable to ``a``; disallowed logits
    are treated as -inf and receive exactly zero weight and zero gradient.
    """
    a = as_tensor(a)
    z = a.data
    if mask is not None:
        mask = np.broadcast_to(mask, z.shape)
        if not mask.any(axis=-1).all():
            raise ValueError("softmax row with every entry masked")
        z = np.where(mask, z, -np.inf)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        _accum(a, out * (g - (g * out).sum(axis=-1, keepdims=True)))

    return _result(out, (a,), backward, "softmax")


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then scale and shift."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    d = x.shape[-1] if x.ndim else 0
    if d == 0:
        raise ShapeError("layer_norm over an empty last axis")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data

    def backward(g):
        if x.requires_grad:
            dxhat = g * gain.data
            dx = inv * (
                dxhat
                - dxhat.mean(axis=-1, keepdims=True)
                - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
            )
            _accum(x, dx)
        if gain.requires_grad:
            _accum(gain, _unbroadcast(g * xhat, gain.shape))
        if bias.requires_grad:
            _accum(bias, _unbroadcast(g, bias.shape))

    return _result(out, (x, gain, bias), backward, "layer_norm")
