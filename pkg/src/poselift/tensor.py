"""Dense tensors with tape-based reverse-mode differentiation.

Every differentiable computation in the package goes through
:func:`apply_primitive`, which dispatches into a closed table of primitives.
Keeping the table closed means gradient coverage and MAC accounting can be
enumerated exhaustively.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Any, Callable, Iterator, Sequence

import numpy as np
from scipy.special import erf

__all__ = [
    "Tensor",
    "Tape",
    "PrimitiveError",
    "PRIMITIVES",
    "apply_primitive",
    "backward",
    "no_grad",
    "get_tape",
    "tensor",
]

_SUPPORTED_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))


class PrimitiveError(ValueError):
    """Raised for shape/dtype violations or unknown primitives."""


class Tensor:
    """N-dimensional array that can take part in gradient recording.

    ``data`` is treated as immutable once the tensor exists; only ``grad`` is
    ever written after construction.
    """

    __slots__ = ("data", "requires_grad", "grad", "name", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        arr = np.array(data, dtype=dtype if dtype is not None else None, copy=True)
        if arr.dtype not in _SUPPORTED_DTYPES:
            arr = arr.astype(np.float64 if dtype is None else dtype)
        self.data: np.ndarray = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name

    @classmethod
    def _wrap(cls, arr: np.ndarray, requires_grad: bool) -> "Tensor":
        t = cls.__new__(cls)
        t.data = arr
        t.requires_grad = requires_grad
        t.grad = None
        t.name = None
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data, False)

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data.astype(dtype), requires_grad=self.requires_grad, name=self.name)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    # operator sugar; every path still lands in apply_primitive
    def __add__(self, other):
        if isinstance(other, Tensor):
            return apply_primitive("add", [self, other])
        return apply_primitive("shift", [self], value=float(other))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return apply_primitive("sub", [self, other])
        return apply_primitive("shift", [self], value=-float(other))

    def __rsub__(self, other):
        return apply_primitive("shift", [apply_primitive("scale", [self], value=-1.0)], value=float(other))

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return apply_primitive("mul", [self, other])
        return apply_primitive("scale", [self], value=float(other))

    __rmul__ = __mul__

    def __neg__(self):
        return apply_primitive("scale", [self], value=-1.0)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("tensor/tensor division is not a primitive")
        return apply_primitive("scale", [self], value=1.0 / float(other))

    def __matmul__(self, other):
        return apply_primitive("matmul", [self, other])

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return apply_primitive("reshape", [self], shape=tuple(int(s) for s in shape))

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return apply_primitive("transpose", [self], axes=tuple(axes))

    def swap_last(self):
        axes = list(range(self.ndim))
        axes[-1], axes[-2] = axes[-2], axes[-1]
        return self.transpose(axes)

    def sum(self, axis=None, keepdims: bool = False):
        return apply_primitive("sum", [self], axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return apply_primitive("mean", [self], axis=axis, keepdims=keepdims)


def tensor(data, requires_grad: bool = False, dtype=np.float64) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


# --------------------------------------------------------------------------
# tape
# --------------------------------------------------------------------------


@dataclass
class Node:
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    attrs: dict[str, Any]
    saved: dict[str, Any]


@dataclass
class Tape:
    """Ordered record of primitive applications.

    Nodes are appended in execution order, so the list is topologically
    sorted by construction.
    """

    nodes: list[Node] = field(default_factory=list)
    enabled: bool = True

    def record(self, node: Node) -> None:
        self.nodes.append(node)

    def clear(self) -> None:
        self.nodes.clear()

    def __len__(self) -> int:
        return len(self.nodes)

    def __enter__(self) -> "Tape":
        _state().stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _state().stack.pop()


class _ThreadState(threading.local):
    def __init__(self):
        self.default = Tape()
        self.stack: list[Tape] = []
        self.grad_enabled = True


_local = _ThreadState()


def _state() -> _ThreadState:
    return _local


def get_tape() -> Tape:
    """Tape that records on the current thread."""
    st = _state()
    return st.stack[-1] if st.stack else st.default


@contextmanager
def no_grad() -> Iterator[None]:
    st = _state()
    prev = st.grad_enabled
    st.grad_enabled = False
    try:
        yield
    finally:
        st.grad_enabled = prev


# --------------------------------------------------------------------------
# primitives
# --------------------------------------------------------------------------


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _require_same_shape(op: str, a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise PrimitiveError(f"{op}: operand shapes differ, {a.shape} vs {b.shape}")


def _axes_tuple(axis, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


@dataclass(frozen=True)
class Primitive:
    forward: Callable[..., tuple[np.ndarray, dict]]
    backward: Callable[..., Sequence[np.ndarray | None]]
    arity: int | None  # None means variadic


def _matmul_fwd(a, b):
    if a.ndim < 2 or b.ndim < 2:
        raise PrimitiveError(f"matmul: operands must be at least 2-D, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise PrimitiveError(
            f"matmul: inner dimensions differ, {a.shape[-1]} (lhs {a.shape}) vs {b.shape[-2]} (rhs {b.shape})"
        )
    try:
        out = np.matmul(a, b)
    except ValueError as exc:
        raise PrimitiveError(f"matmul: batch dimensions incompatible, {a.shape} vs {b.shape}") from exc
    return out, {}


def _matmul_bwd(g, node):
    a, b = (t.data for t in node.inputs)
    ga = _unbroadcast(np.matmul(g, np.swapaxes(b, -1, -2)), a.shape)
    gb = _unbroadcast(np.matmul(np.swapaxes(a, -1, -2), g), b.shape)
    return ga, gb


def _transpose_fwd(x, axes):
    if sorted(axes) != list(range(x.ndim)):
        raise PrimitiveError(f"transpose: axes {axes} are not a permutation of rank {x.ndim}")
    return np.ascontiguousarray(np.transpose(x, axes)), {}


def _transpose_bwd(g, node):
    return (np.transpose(g, np.argsort(node.attrs["axes"])),)


def _reshape_fwd(x, shape):
    if int(np.prod(shape)) != x.size and -1 not in shape:
        raise PrimitiveError(f"reshape: cannot view {x.shape} ({x.size} values) as {shape}")
    try:
        return x.reshape(shape), {}
    except ValueError as exc:
        raise PrimitiveError(f"reshape: cannot view {x.shape} as {shape}") from exc


def _reshape_bwd(g, node):
    return (g.reshape(node.inputs[0].shape),)


def _add_fwd(a, b):
    _require_same_shape("add", a, b)
    return a + b, {}


def _sub_fwd(a, b):
    _require_same_shape("sub", a, b)
    return a - b, {}


def _mul_fwd(a, b):
    _require_same_shape("mul", a, b)
    return a * b, {}


def _add_bias_fwd(x, b):
    if b.ndim > x.ndim or any(bd not in (1, xd) for bd, xd in zip(b.shape[::-1], x.shape[::-1])):
        raise PrimitiveError(f"add_bias: bias shape {b.shape} does not expand to {x.shape}")
    return x + b, {}


def _expand_fwd(x, shape):
    shape = tuple(shape)
    if x.ndim != len(shape) or any(xd not in (1, sd) for xd, sd in zip(x.shape, shape)):
        raise PrimitiveError(f"expand: {x.shape} cannot expand to {shape} (only size-1 axes stretch)")
    return np.ascontiguousarray(np.broadcast_to(x, shape)), {}


def _expand_bwd(g, node):
    return (_unbroadcast(g, node.inputs[0].shape),)


def _softmax_fwd(x):
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)
    return y, {}


def _softmax_bwd(g, node):
    y = node.output.data
    return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)


_SQRT_HALF = 1.0 / np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def _gelu_fwd(x):
    cdf = 0.5 * (1.0 + erf(x * _SQRT_HALF))
    return (x * cdf).astype(x.dtype, copy=False), {"cdf": cdf}


def _gelu_bwd(g, node):
    x = node.inputs[0].data
    pdf = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
    return (g * (node.saved["cdf"] + x * pdf),)


def _layer_norm_fwd(x, gamma, beta, eps):
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise PrimitiveError(f"layer_norm: affine shapes {gamma.shape}/{beta.shape} do not match feature dim {d}")
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    return xhat * gamma + beta, {"xhat": xhat, "inv": inv}


def _norm_input_grad(gx_hat, xhat, inv, axes):
    m1 = gx_hat.mean(axis=axes, keepdims=True)
    m2 = (gx_hat * xhat).mean(axis=axes, keepdims=True)
    return inv * (gx_hat - m1 - xhat * m2)


def _layer_norm_bwd(g, node):
    gamma = node.inputs[1].data
    xhat, inv = node.saved["xhat"], node.saved["inv"]
    lead = tuple(range(g.ndim - 1))
    gx = _norm_input_grad(g * gamma, xhat, inv, -1)
    return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)


def _batch_norm_fwd(x, gamma, beta, eps, training, running_mean=None, running_var=None):
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise PrimitiveError(f"batch_norm: affine shapes {gamma.shape}/{beta.shape} do not match channels {d}")
    lead = tuple(range(x.ndim - 1))
    if training:
        mu = x.mean(axis=lead, keepdims=True)
        xc = x - mu
        var = (xc * xc).mean(axis=lead, keepdims=True)
    else:
        if running_mean is None or running_var is None:
            raise PrimitiveError("batch_norm: eval mode needs running_mean and running_var")
        xc = x - np.asarray(running_mean, dtype=x.dtype)
        var = np.asarray(running_var, dtype=x.dtype)
    inv = (1.0 / np.sqrt(var + eps)).astype(x.dtype, copy=False)
    xhat = xc * inv
    return xhat * gamma + beta, {"xhat": xhat, "inv": inv}


def _batch_norm_bwd(g, node):
    gamma = node.inputs[1].data
    xhat, inv = node.saved["xhat"], node.saved["inv"]
    lead = tuple(range(g.ndim - 1))
    if node.attrs["training"]:
        gx = _norm_input_grad(g * gamma, xhat, inv, lead)
    else:
        gx = g * gamma * inv
    return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)


def _sum_fwd(x, axis=None, keepdims=False):
    return np.asarray(x.sum(axis=axis, keepdims=keepdims)), {}


def _expand_reduced(g, node):
    x = node.inputs[0].data
    axes = _axes_tuple(node.attrs.get("axis"), x.ndim)
    if not node.attrs.get("keepdims", False):
        g = np.expand_dims(g, axes)
    return np.broadcast_to(g, x.shape), axes


def _sum_bwd(g, node):
    gx, _ = _expand_reduced(g, node)
    return (np.array(gx),)


def _mean_fwd(x, axis=None, keepdims=False):
    return np.asarray(x.mean(axis=axis, keepdims=keepdims)), {}


def _mean_bwd(g, node):
    gx, axes = _expand_reduced(g, node)
    count = int(np.prod([node.inputs[0].shape[a] for a in axes]))
    return (np.array(gx) / count,)


def _concat_fwd(*xs, axis=-1):
    ref = xs[0]
    ax = axis % ref.ndim
    for x in xs[1:]:
        if x.ndim != ref.ndim or any(x.shape[i] != ref.shape[i] for i in range(ref.ndim) if i != ax):
            raise PrimitiveError(f"concat: shapes {ref.shape} and {x.shape} disagree off axis {axis}")
    return np.concatenate(xs, axis=ax), {}


def _concat_bwd(g, node):
    ax = node.attrs.get("axis", -1) % g.ndim
    bounds = np.cumsum([t.shape[ax] for t in node.inputs])[:-1]
    return tuple(np.split(g, bounds, axis=ax))


def _slice_fwd(x, axis, start, stop):
    ax = axis % x.ndim
    if not (0 <= start < stop <= x.shape[ax]):
        raise PrimitiveError(f"slice: range [{start}, {stop}) invalid for axis {axis} of extent {x.shape[ax]}")
    idx = [slice(None)] * x.ndim
    idx[ax] = slice(start, stop)
    return np.ascontiguousarray(x[tuple(idx)]), {}


def _slice_bwd(g, node):
    x = node.inputs[0].data
    ax = node.attrs["axis"] % x.ndim
    out = np.zeros_like(x)
    idx = [slice(None)] * x.ndim
    idx[ax] = slice(node.attrs["start"], node.attrs["stop"])
    out[tuple(idx)] = g
    return (out,)


def _norm_fwd(x):
    n = np.sqrt((x * x).sum(axis=-1))
    return n, {}


def _norm_bwd(g, node):
    x = node.inputs[0].data
    n = node.output.data[..., None]
    safe = np.where(n > 0, n, 1.0)
    return (np.where(n > 0, g[..., None] * x / safe, 0.0).astype(x.dtype, copy=False),)


PRIMITIVES: dict[str, Primitive] = {
    "matmul": Primitive(_matmul_fwd, _matmul_bwd, 2),
    "transpose": Primitive(_transpose_fwd, _transpose_bwd, 1),
    "reshape": Primitive(_reshape_fwd, _reshape_bwd, 1),
    "add": Primitive(_add_fwd, lambda g, n: (g, g), 2),
    "sub": Primitive(_sub_fwd, lambda g, n: (g, -g), 2),
    "mul": Primitive(_mul_fwd, lambda g, n: (g * n.inputs[1].data, g * n.inputs[0].data), 2),
    "add_bias": Primitive(
        _add_bias_fwd, lambda g, n: (g, _unbroadcast(g, n.inputs[1].shape)), 2
    ),
    "expand": Primitive(_expand_fwd, _expand_bwd, 1),
    "scale": Primitive(lambda x, value: (x * x.dtype.type(value), {}), lambda g, n: (g * n.attrs["value"],), 1),
    "shift": Primitive(lambda x, value: (x + x.dtype.type(value), {}), lambda g, n: (g,), 1),
    "softmax": Primitive(_softmax_fwd, _softmax_bwd, 1),
    "relu": Primitive(lambda x: (np.maximum(x, 0), {}), lambda g, n: (g * (n.inputs[0].data > 0),), 1),
    "tanh": Primitive(lambda x: (np.tanh(x), {}), lambda g, n: (g * (1 - n.output.data**2),), 1),
    "gelu": Primitive(_gelu_fwd, _gelu_bwd, 1),
    "layer_norm": Primitive(_layer_norm_fwd, _layer_norm_bwd, 3),
    "batch_norm": Primitive(_batch_norm_fwd, _batch_norm_bwd, 3),
    "sum": Primitive(_sum_fwd, _sum_bwd, 1),
    "mean": Primitive(_mean_fwd, _mean_bwd, 1),
    "concat": Primitive(_concat_fwd, _concat_bwd, None),
    "slice": Primitive(_slice_fwd, _slice_bwd, 1),
    "norm": Primitive(_norm_fwd, _norm_bwd, 1),
}


def apply_primitive(op: str, inputs: Sequence[Tensor], **attrs) -> Tensor:
    """Evaluate primitive ``op`` and record it when any input needs a gradient."""
    prim = PRIMITIVES.get(op)
    if prim is None:
        raise PrimitiveError(f"unknown primitive {op!r}")
    if prim.arity is not None and len(inputs) != prim.arity:
        raise PrimitiveError(f"{op}: expected {prim.arity} inputs, got {len(inputs)}")
    if not inputs:
        raise PrimitiveError(f"{op}: no inputs")
    dtype = inputs[0].dtype
    for t in inputs:
        if not isinstance(t, Tensor):
            raise PrimitiveError(f"{op}: inputs must be Tensor, got {type(t).__name__}")
        if t.dtype != dtype:
            raise PrimitiveError(f"{op}: mixed dtypes {dtype} and {t.dtype}")
    out_data, saved = prim.forward(*(t.data for t in inputs), **attrs)
    if out_data.dtype != dtype:
        out_data = out_data.astype(dtype)
    st = _state()
    needs_grad = st.grad_enabled and any(t.requires_grad for t in inputs)
    out = Tensor._wrap(out_data, needs_grad)
    if needs_grad:
        get_tape().record(Node(op, tuple(inputs), out, attrs, saved))
    return out


def backward(loss: Tensor, tape: Tape | None = None) -> dict[int, np.ndarray]:
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every recorded leaf.

    Consumes the tape. Returns a map from ``id(leaf)`` to the gradient
    contributed by this call.
    """
    tape = tape if tape is not None else get_tape()
    if loss.size != 1:
        raise PrimitiveError(f"backward: loss must be scalar, got shape {loss.shape}")
    if not tape.nodes:
        raise PrimitiveError("backward: tape is empty")
    produced = {id(n.output) for n in tape.nodes}
    if id(loss) not in produced:
        raise PrimitiveError("backward: loss was not produced on this tape")

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[int, Tensor] = {}
    for node in reversed(tape.nodes):
        for t in node.inputs:
            if t.requires_grad and id(t) not in produced:
                leaves[id(t)] = t
        g = grads.pop(id(node.output), None)
        if g is None:
            continue
        in_grads = PRIMITIVES[node.op].backward(g, node)
        for t, gi in zip(node.inputs, in_grads):
            if gi is None or not t.requires_grad:
                continue
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = np.asarray(gi, dtype=t.dtype)
    tape.clear()

    out: dict[int, np.ndarray] = {}
    for key, leaf in leaves.items():
        g = grads.get(key)
        if g is None:
            g = np.zeros_like(leaf.data)
        g = np.asarray(g, dtype=leaf.dtype).reshape(leaf.shape)
        leaf.grad = g.copy() if leaf.grad is None else leaf.grad + g
        out[key] = g
    return out
