"""A small dense reverse-mode autodiff engine on float64 numpy arrays.

Only the operations the model needs are provided. Binary elementwise ops
follow numpy broadcasting and reduce gradients back to operand shapes.
Every op output is checked for NaN/Inf.
"""

from __future__ import annotations

import contextlib
import json
from typing import Mapping, Optional, Sequence, Union

import numpy as np

NORM_FLOOR = 1e-30
CHECKPOINT_FORMAT = "gna-params"
CHECKPOINT_VERSION = 1

_grad_enabled = True


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


ArrayLike = Union["Tensor", np.ndarray, float, int, Sequence]


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _op: str = ""):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = None
        self.op = _op

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other): return add(self, other)
    def __radd__(self, other): return add(other, self)
    def __sub__(self, other): return sub(self, other)
    def __rsub__(self, other): return sub(other, self)
    def __mul__(self, other): return mul(self, other)
    def __rmul__(self, other): return mul(other, self)
    def __neg__(self): return mul(self, -1.0)
    def __matmul__(self, other): return matmul(self, other)

    @property
    def T(self):
        return transpose(self)

    def backward(self):
        backward(self)


def as_tensor(x: ArrayLike) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, parents: tuple, op: str, backward_fn) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"{op}: produced non-finite values")
    needs = _grad_enabled and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=needs, _parents=parents if needs else (), _op=op)
    if needs:
        out._backward = backward_fn
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _check_broadcast(op: str, a: np.ndarray, b: np.ndarray) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------------------
# elementwise

def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a.data, b.data)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result(a.data + b.data, (a, b), "add", bw)


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a.data, b.data)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _result(a.data - b.data, (a, b), "sub", bw)


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    """Elementwise product; a python scalar operand gives scalar-mul."""
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a.data, b.data)

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _result(a.data * b.data, (a, b), "mul", bw)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _result(a.data * c, (a,), "scale", lambda g: (g * c,))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _result(np.where(mask, a.data, 0.0), (a,), "relu", lambda g: (g * mask,))


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _result(out, (a,), "sigmoid", lambda g: (g * out * (1.0 - out),))


def exp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    return _result(out, (a,), "exp", lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    x = a.data
    if np.any(x <= 0):
        raise NonFiniteError("log: non-positive input")
    return _result(np.log(x), (a,), "log", lambda g: (g / x,))


def square(a: Tensor) -> Tensor:
    x = a.data
    return _result(x * x, (a,), "square", lambda g: (2.0 * g * x,))


# ---------------------------------------------------------------------------
# linear algebra and shape

def matmul(a: ArrayLike, b: ArrayLike) -> Tensor:
    """``np.matmul`` semantics for 2-D and batched 3-D operands."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}") from None

    def bw(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        if b.requires_grad:
            if b.ndim == 2 and a.ndim > 2:
                gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return _result(out, (a, b), "matmul", bw)


def transpose(a: Tensor) -> Tensor:
    """Swap the last two axes."""
    if a.ndim < 2:
        raise ShapeError(f"transpose: need at least 2 dims, got {a.shape}")
    return _result(np.swapaxes(a.data, -1, -2), (a,), "transpose",
                   lambda g: (np.swapaxes(g, -1, -2),))


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    old = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {old} to {tuple(shape)}") from None
    return _result(out, (a,), "reshape", lambda g: (g.reshape(old),))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError:
        raise ShapeError(f"concat: incompatible shapes {[t.shape for t in ts]}") from None
    sizes = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def bw(g):
        return tuple(np.split(g, sizes, axis=axis))

    return _result(out, tuple(ts), "concat", bw)


def einsum(subscripts: str, *operands: Tensor) -> Tensor:
    """Explicit-output einsum (``"ij,jk->ik"``); no repeated index within an operand."""
    ops = [as_tensor(o) for o in operands]
    lhs, out_sub = subscripts.replace(" ", "").split("->")
    in_subs = lhs.split(",")
    if len(in_subs) != len(ops):
        raise ShapeError(f"einsum: {len(in_subs)} subscripts for {len(ops)} operands")
    for s, o in zip(in_subs, ops):
        if len(set(s)) != len(s) or len(s) != o.ndim:
            raise ShapeError(f"einsum: subscript {s!r} does not fit shape {o.shape}")
    try:
        out = np.einsum(subscripts, *[o.data for o in ops], optimize=len(ops) > 2)
    except ValueError as exc:
        raise ShapeError(f"einsum {subscripts!r}: {exc}") from None

    def bw(g):
        grads = []
        for i, (s, o) in enumerate(zip(in_subs, ops)):
            if not o.requires_grad:
                grads.append(None)
                continue
            others = [(in_subs[j], ops[j].data) for j in range(len(ops)) if j != i]
            avail = set(out_sub).union(*[set(x) for x, _ in others]) if others else set(out_sub)
            kept = "".join(c for c in s if c in avail)
            expr = ",".join([out_sub] + [x for x, _ in others]) + "->" + kept
            gi = np.einsum(expr, g, *[d for _, d in others], optimize=len(others) > 1)
            if kept != s:
                gi = np.expand_dims(gi, tuple(k for k, c in enumerate(s) if c not in avail))
                gi = np.broadcast_to(gi, o.shape).copy()
            grads.append(gi)
        return tuple(grads)

    return _result(np.asarray(out), tuple(ops), "einsum", bw)


# ---------------------------------------------------------------------------
# reductions and normalizations

def sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    shape = a.shape
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _result(np.asarray(out), (a,), "sum", bw)


def mean(a: Tensor) -> Tensor:
    n = a.data.size
    return scale(sum(a), 1.0 / n)


def mean_rows(a: Tensor) -> Tensor:
    """Column-wise mean over the rows of the last two axes: (..., n, d) -> (..., d)."""
    n = a.shape[-2]
    if n == 0:
        raise ShapeError("mean_rows: no rows")
    return scale(sum(a, axis=-2), 1.0 / n)


def pad_rows(a: Tensor, fill: Tensor, total: int) -> Tensor:
    """Append copies of the row vector ``fill`` until ``a`` has ``total`` rows."""
    n, d = a.shape
    if fill.shape != (d,):
        raise ShapeError(f"pad_rows: fill shape {fill.shape} does not match row width {d}")
    if total < n:
        raise ShapeError(f"pad_rows: cannot pad {n} rows down to {total}")
    extra = total - n
    out = np.concatenate([a.data, np.broadcast_to(fill.data, (extra, d))], axis=0)

    def bw(g):
        return g[:n], g[n:].sum(axis=0)

    return _result(out, (a, fill), "pad_rows", bw)


def _safe_div_rows(x: np.ndarray, axis: int):
    s = x.sum(axis=axis, keepdims=True)
    return np.maximum(s, NORM_FLOOR), s >= NORM_FLOOR


def row_normalize(a: Tensor) -> Tensor:
    """Divide each row (last axis) by its sum; sums below 1e-30 are clamped."""
    return _normalize(a, -1, "row_normalize")


def col_normalize(a: Tensor) -> Tensor:
    """Divide each column (second-to-last axis) by its sum."""
    return _normalize(a, -2, "col_normalize")


def _normalize(a: Tensor, axis: int, op: str) -> Tensor:
    x = a.data
    s, live = _safe_div_rows(x, axis)
    out = x / s

    def bw(g):
        # d(x_i / s)/dx_j = delta_ij / s - x_i / s^2 on unclamped sums
        inner = (g * x).sum(axis=axis, keepdims=True)
        return (g / s - live * inner / (s * s),)

    return _result(out, (a,), op, bw)


def logsumexp(a: Tensor, axis: int, mask: Optional[np.ndarray] = None) -> Tensor:
    """``log(sum(mask * exp(a)))`` along ``axis`` (kept as size 1).

    Slices with no unmasked entry return 0.
    """
    x = a.data
    m = np.ones_like(x, dtype=bool) if mask is None else np.broadcast_to(mask.astype(bool), x.shape)
    xm = np.where(m, x, -np.inf)
    mx = np.max(xm, axis=axis, keepdims=True)
    empty = ~np.isfinite(mx)
    mx = np.where(empty, 0.0, mx)
    e = np.exp(np.where(m, x - mx, -np.inf))
    s = e.sum(axis=axis, keepdims=True)
    safe = np.where(empty, 1.0, s)
    out = np.where(empty, 0.0, np.log(safe) + mx)
    weights = e / safe

    def bw(g):
        return (g * weights,)

    return _result(out, (a,), "logsumexp", bw)


# ---------------------------------------------------------------------------
# backward pass

def _topo(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf."""
    if loss.data.size != 1:
        raise ShapeError(f"backward: loss must be a scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order = _topo(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = np.array(pg, dtype=np.float64, copy=True)


# ---------------------------------------------------------------------------
# optimizer and checkpoints

class Adam:
    """Adam with decoupled weight decay."""

    def __init__(self, params: Mapping[str, Tensor], lr: float = 1e-3, weight_decay: float = 5e-4,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = dict(params)
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def step(self) -> None:
        missing = [k for k, p in self.params.items() if p.grad is None]
        if missing:
            raise RuntimeError(f"adam_step: no gradient for {missing[:5]}")
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for k, p in self.params.items():
            g = p.grad
            m = self.m[k]
            v = self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            if self.weight_decay:
                update = update + self.weight_decay * p.data
            p.data = p.data - self.lr * update


def save_params(path, params: Mapping[str, Tensor], meta: Optional[dict] = None) -> None:
    """Write parameters as JSON; float64 values round-trip exactly through repr."""
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "meta": meta or {},
        "params": {k: {"shape": list(p.shape), "values": p.data.ravel().tolist()} for k, p in params.items()},
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def load_params(path) -> tuple[dict[str, Tensor], dict]:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a parameter checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {doc.get('version')}")
    params = {}
    for k, rec in doc["params"].items():
        arr = np.asarray(rec["values"], dtype=np.float64).reshape(rec["shape"])
        params[k] = Tensor(arr, requires_grad=True)
    return params, doc.get("meta", {})
