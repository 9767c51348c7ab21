"""Dense float64 tensors with reverse-mode automatic differentiation.

A small dynamic tape: every differentiable operation links its output to
its inputs through a closure that computes vector-Jacobian products. The
graph is rebuilt on every forward pass and freed when its tensors go out
of scope. A graph is single-threaded while being built or differentiated;
tensors with no in-progress graph may be shared read-only, and independent
graphs may run concurrently.

Broadcasting is restricted to leading axes: a smaller operand must match
the trailing dimensions of the larger one (a scalar matches anything).
"""

from __future__ import annotations

from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import (
    ContractError,
    DegenerateLossError,
    DimensionError,
    InputError,
)

__all__ = [
    "Tensor",
    "no_grad",
    "matmul",
    "transpose",
    "reshape",
    "relu",
    "sigmoid",
    "softmax_lastaxis",
    "layernorm",
    "cross_entropy",
    "elementwise",
    "sum_all",
    "abs_",
    "reciprocal",
    "gather_rows",
    "concat_rows",
    "backward",
    "node",
]

_GRAD_ENABLED = True


@contextmanager
def no_grad():
    """Disable tape recording inside the block (inference-only forwards)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    """A dense float64 array, optionally carrying a gradient.

    `grad` is populated by `backward` and has the same shape as `data`.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim > 0 and not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents: tuple[Tensor, ...] = ()
        self._vjp = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError("item() requires a single-element tensor")
        return float(self.data.reshape(()))

    def detached(self) -> "Tensor":
        """A constant view of this tensor's values (shares the buffer)."""
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # Operator sugar; floats are promoted to constant tensors.
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


def node(data: np.ndarray, parents: tuple[Tensor, ...], vjp: Callable) -> Tensor:
    """Build an op-output tensor; extension point for custom gradients.

    `vjp(grad_out)` must return one gradient array (or None) per parent,
    each shaped like the corresponding parent's data. Fresh arrays only:
    the caller may keep references to them.
    """
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._vjp = vjp
    else:
        out.requires_grad = False
        out._parents = ()
        out._vjp = None
    return out


def _check_leading_broadcast(sa: tuple[int, ...], sb: tuple[int, ...]) -> None:
    if sa == sb:
        return
    small, big = (sa, sb) if len(sa) <= len(sb) else (sb, sa)
    if small == () or big[len(big) - len(small):] == small:
        return
    raise DimensionError(f"shapes {sa} and {sb} do not broadcast over leading axes")


def _reduce_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the original operand shape."""
    if g.shape == shape:
        return g
    axes = tuple(range(g.ndim - len(shape)))
    out = g.sum(axis=axes)
    return out.reshape(shape)


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_leading_broadcast(a.shape, b.shape)
    data = a.data + b.data

    def vjp(g):
        return (_reduce_to(g, a.shape), _reduce_to(g, b.shape))

    return node(data, (a, b), vjp)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_leading_broadcast(a.shape, b.shape)
    data = a.data - b.data

    def vjp(g):
        return (_reduce_to(g, a.shape), _reduce_to(-g, b.shape))

    return node(data, (a, b), vjp)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_leading_broadcast(a.shape, b.shape)
    data = a.data * b.data

    def vjp(g):
        return (_reduce_to(g * b.data, a.shape), _reduce_to(g * a.data, b.shape))

    return node(data, (a, b), vjp)


def neg(a: Tensor) -> Tensor:
    a = _as_tensor(a)

    def vjp(g):
        return (-g,)

    return node(-a.data, (a,), vjp)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul needs 2-D operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"inner dimensions disagree: {a.shape} @ {b.shape}")
    data = a.data @ b.data

    def vjp(g):
        return (g @ b.data.T, a.data.T @ g)

    return node(data, (a, b), vjp)


def transpose(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    if a.ndim != 2:
        raise DimensionError(f"transpose needs a 2-D tensor, got {a.shape}")

    def vjp(g):
        return (np.ascontiguousarray(g.T),)

    return node(np.ascontiguousarray(a.data.T), (a,), vjp)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    a = _as_tensor(a)
    shape = tuple(shape)
    old = a.shape

    def vjp(g):
        return (g.reshape(old),)

    try:
        data = a.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(str(exc)) from None
    return node(data, (a,), vjp)


def relu(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    mask = a.data > 0.0

    def vjp(g):
        return (g * mask,)

    return node(np.where(mask, a.data, 0.0), (a,), vjp)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # exp may overflow to inf for very negative inputs; 1/(1+inf) == 0 is
    # the value we want, so just silence the warning.
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-x))


def sigmoid(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    s = _sigmoid(a.data)

    def vjp(g):
        return (g * s * (1.0 - s),)

    return node(s, (a,), vjp)


def softmax_lastaxis(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    if a.ndim == 0:
        raise DimensionError("softmax needs at least one axis")
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        inner = (g * s).sum(axis=-1, keepdims=True)
        return (s * (g - inner),)

    return node(s, (a,), vjp)


def layernorm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    x, gain, bias = _as_tensor(x), _as_tensor(gain), _as_tensor(bias)
    if x.ndim == 0 or x.shape[-1] == 0:
        raise DimensionError("layernorm needs a non-empty last axis")
    d = x.shape[-1]
    gb = np.broadcast_to(gain.data, (d,))
    bb = np.broadcast_to(bias.data, (d,))

    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    data = xhat * gb + bb

    def vjp(g):
        dxhat = g * gb
        m1 = dxhat.mean(axis=-1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
        dx = inv * (dxhat - m1 - xhat * m2)
        red = tuple(range(g.ndim - 1))
        dgain = (g * xhat).sum(axis=red) if red else g * xhat
        dbias = g.sum(axis=red) if red else g.copy()
        return (dx, _reduce_to(dgain, gain.shape), _reduce_to(dbias, bias.shape))

    return node(data, (x, gain, bias), vjp)


def cross_entropy(logits: Tensor, targets, ignore_index: int | None = None) -> Tensor:
    """Mean negative log-softmax over non-ignored positions.

    `targets` is an integer sequence of length logits.shape[0]; positions
    equal to `ignore_index` contribute nothing to the mean.
    """
    logits = _as_tensor(logits)
    if logits.ndim != 2:
        raise DimensionError(f"cross_entropy expects [T, V] logits, got {logits.shape}")
    t = np.asarray(targets, dtype=np.int64)
    if t.ndim != 1 or t.shape[0] != logits.shape[0]:
        raise DimensionError(
            f"targets length {t.shape} does not match logits rows {logits.shape[0]}"
        )
    v = logits.shape[1]
    keep = np.ones(t.shape[0], dtype=bool) if ignore_index is None else (t != ignore_index)
    n_keep = int(keep.sum())
    if n_keep == 0:
        raise DegenerateLossError("all positions ignored; loss undefined")
    kept_t = t[keep]
    if kept_t.size and (kept_t.min() < 0 or kept_t.max() >= v):
        raise InputError(f"target ids must lie in [0, {v})")

    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - lse
    rows = np.arange(t.shape[0])
    safe_t = np.where(keep, t, 0)
    losses = -logp[rows, safe_t]
    data = np.asarray(losses[keep].sum() / n_keep)

    def vjp(g):
        gl = np.exp(logp)
        gl[rows, safe_t] -= 1.0
        gl[~keep] = 0.0
        gl *= float(g) / n_keep
        return (gl,)

    return node(data, (logits,), vjp)


def sum_all(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    shape = a.shape

    def vjp(g):
        return (np.full(shape, float(g)),)

    return node(np.asarray(a.data.sum()), (a,), vjp)


def abs_(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    sign = np.sign(a.data)

    def vjp(g):
        return (g * sign,)

    return node(np.abs(a.data), (a,), vjp)


def reciprocal(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    # 1/0 -> inf propagates to the loss, where training's finite check
    # reports the divergence; the warning itself is just noise.
    with np.errstate(divide="ignore"):
        inv = 1.0 / a.data

    def vjp(g):
        return (-g * inv * inv,)

    return node(inv, (a,), vjp)


def gather_rows(a: Tensor, indices) -> Tensor:
    """Select rows by index along axis 0; duplicate indices accumulate grads."""
    a = _as_tensor(a)
    idx = np.asarray(indices, dtype=np.int64)
    if idx.ndim != 1:
        raise DimensionError("gather_rows needs a 1-D index sequence")
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[0]):
        raise InputError(f"row index out of range for {a.shape[0]} rows")
    data = a.data[idx]
    shape = a.shape

    def vjp(g):
        out = np.zeros(shape)
        np.add.at(out, idx, g)
        return (out,)

    return node(np.ascontiguousarray(data), (a,), vjp)


def concat_rows(parts: Iterable[Tensor]) -> Tensor:
    parts = tuple(_as_tensor(p) for p in parts)
    if not parts:
        raise InputError("concat_rows needs at least one tensor")
    trailing = {p.shape[1:] for p in parts}
    if len(trailing) != 1:
        raise DimensionError(f"trailing dimensions differ: {sorted(trailing)}")
    sizes = [p.shape[0] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        return tuple(g[offsets[i]:offsets[i + 1]] for i in range(len(parts)))

    return node(np.concatenate([p.data for p in parts], axis=0), parts, vjp)


_UNARY = {"relu": relu, "sigmoid": sigmoid, "softmax_lastaxis": softmax_lastaxis}
_BINARY = {"add": add, "mul": mul}


def elementwise(x: Tensor, kind: str, other: Tensor | None = None) -> Tensor:
    """Dispatch by name over the pointwise op set."""
    if kind in _UNARY:
        return _UNARY[kind](x)
    if kind in _BINARY:
        if other is None:
            raise InputError(f"elementwise '{kind}' needs a second operand")
        return _BINARY[kind](x, other)
    raise InputError(f"unknown elementwise kind '{kind}'")


def backward(loss: Tensor) -> None:
    """Populate `grad` on every tracked ancestor of a scalar loss."""
    if not isinstance(loss, Tensor):
        raise ContractError("backward expects a Tensor root")
    if loss.data.size != 1:
        raise ContractError(f"backward root must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return

    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        t, done = stack.pop()
        if done:
            topo.append(t)
            continue
        if id(t) in seen:
            continue
        seen.add(id(t))
        stack.append((t, True))
        for p in t._parents:
            if p._vjp is not None and id(p) not in seen:
                stack.append((p, False))

    loss.grad = np.ones_like(loss.data)
    for t in reversed(topo):
        if t.grad is None:
            continue
        grads = t._vjp(t.grad)
        for p, pg in zip(t._parents, grads):
            if pg is None or not p.requires_grad:
                continue
            p.grad = pg if p.grad is None else p.grad + pg
