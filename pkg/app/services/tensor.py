"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every operation returns a fresh read-only :class:`Tensor`. While a
:class:`GradTape` is active, operations whose inputs are attached to that tape
append a node (operation kind, input node ids, saved values, vector-Jacobian
product) to it. :func:`backward` then walks the tape once in reverse order.
"""
import threading
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf, logsumexp as _logsumexp

from app.core.errors import NonFiniteError, ShapeError

ArrayLike = Union["Tensor", np.ndarray, float, int, Sequence]
Axis = Union[int, Tuple[int, ...], None]
BackwardFn = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]

LAYER_NORM_EPS = 1e-6

_state = threading.local()


def _tape_stack() -> List["GradTape"]:
    stack = getattr(_state, "stack", None)
    if stack is None:
        stack = []
        _state.stack = stack
    return stack


def current_tape() -> Optional["GradTape"]:
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    """Immutable dense array of 64-bit floats, optionally linked to a tape node"""

    __slots__ = ("_data", "node_id", "_tape")
    __array_ufunc__ = None

    def __init__(self, data: ArrayLike):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.array(data, dtype=np.float64)
        arr.flags.writeable = False
        self._data = arr
        self.node_id: Optional[int] = None
        self._tape: Optional["GradTape"] = None

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        out = cls.__new__(cls)
        arr = np.asarray(arr, dtype=np.float64)
        if arr.flags.writeable:
            arr.flags.writeable = False
        out._data = arr
        out.node_id = None
        out._tape = None
        return out

    @property
    def data(self) -> np.ndarray:
        return self._data

    @property
    def dims(self) -> List[int]:
        return list(self._data.shape)

    @property
    def shape(self) -> Tuple[int, ...]:
        return self._data.shape

    @property
    def ndim(self) -> int:
        return self._data.ndim

    @property
    def size(self) -> int:
        return int(self._data.size)

    def numpy(self) -> np.ndarray:
        return np.array(self._data)

    def item(self) -> float:
        if self._data.size != 1:
            raise ShapeError(f"item: tensor of shape {self.shape} is not a scalar")
        return float(self._data.reshape(()))

    def is_tracked_by(self, tape: "GradTape") -> bool:
        return self._tape is tape and self.node_id is not None

    def __repr__(self) -> str:
        return f"Tensor(dims={self.dims}, node_id={self.node_id})"

    def __len__(self) -> int:
        return self.shape[0]

    def __add__(self, other: ArrayLike) -> "Tensor":
        return add(self, other)

    def __radd__(self, other: ArrayLike) -> "Tensor":
        return add(other, self)

    def __sub__(self, other: ArrayLike) -> "Tensor":
        return subtract(self, other)

    def __rsub__(self, other: ArrayLike) -> "Tensor":
        return subtract(other, self)

    def __mul__(self, other: ArrayLike) -> "Tensor":
        return multiply(self, other)

    def __rmul__(self, other: ArrayLike) -> "Tensor":
        return multiply(other, self)

    def __truediv__(self, other: ArrayLike) -> "Tensor":
        return divide(self, other)

    def __rtruediv__(self, other: ArrayLike) -> "Tensor":
        return divide(other, self)

    def __neg__(self) -> "Tensor":
        return negate(self)

    def __matmul__(self, other: ArrayLike) -> "Tensor":
        return matmul(self, other)

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def reshape(self, *shape: int) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes: int) -> "Tensor":
        return transpose(self, axes or None)

    def sum(self, axis: Axis = None, keepdims: bool = False) -> "Tensor":
        return tensor_sum(self, axis, keepdims)

    def mean(self, axis: Axis = None, keepdims: bool = False) -> "Tensor":
        return mean(self, axis, keepdims)


@dataclass
class TapeNode:
    kind: str
    inputs: Tuple[Optional[int], ...]
    saved: Tuple = ()
    backward_fn: Optional[BackwardFn] = None


@dataclass
class GradTape:
    """Append-only record of operations, usable as a context manager.

    Node ids are list positions, so inputs always precede outputs.
    """

    nodes: List[TapeNode] = field(default_factory=list)
    gradients: Dict[int, Tensor] = field(default_factory=dict)

    def __enter__(self) -> "GradTape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()

    def _append(self, node: TapeNode) -> int:
        self.nodes.append(node)
        return len(self.nodes) - 1

    def watch(self, tensor: Tensor) -> Tensor:
        """Mark ``tensor`` as a trainable leaf of this tape.

        Watching the same tensor twice is a no-op, so one parameter used by
        several branches owns a single gradient accumulator.
        """
        if not tensor.is_tracked_by(self):
            tensor.node_id = self._append(TapeNode("leaf", ()))
            tensor._tape = self
        return tensor

    def gradient(self, loss: Tensor, sources: Sequence[Tensor]) -> List[Tensor]:
        """Gradients of ``loss`` with respect to ``sources`` (zeros where unreached)"""
        grads = backward(self, loss)
        result = []
        for src in sources:
            if src.is_tracked_by(self) and src.node_id in grads:
                result.append(grads[src.node_id])
            else:
                result.append(Tensor._wrap(np.zeros(src.shape)))
        return result


def backward(tape: GradTape, loss: Tensor) -> Dict[int, Tensor]:
    """Reverse pass from a scalar ``loss``; returns leaf node id -> gradient"""
    if loss.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")

    tape.gradients = {}
    if not loss.is_tracked_by(tape):
        return tape.gradients

    pending: Dict[int, np.ndarray] = {loss.node_id: np.ones(loss.shape)}
    for node_id in range(loss.node_id, -1, -1):
        node = tape.nodes[node_id]
        if node.backward_fn is None:
            continue
        grad = pending.pop(node_id, None)
        if grad is None:
            continue
        for input_id, input_grad in zip(node.inputs, node.backward_fn(grad)):
            if input_id is None or input_grad is None:
                continue
            if input_id in pending:
                pending[input_id] = pending[input_id] + input_grad
            else:
                pending[input_id] = input_grad

    tape.gradients = {
        node_id: Tensor._wrap(grad)
        for node_id, grad in pending.items()
        if tape.nodes[node_id].kind == "leaf"
    }
    return tape.gradients


def as_tensor(value: ArrayLike) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _record(kind: str, inputs: Sequence[Tensor], out: np.ndarray,
            backward_fn: BackwardFn, saved: Tuple = ()) -> Tensor:
    result = Tensor._wrap(out)
    tape = current_tape()
    if tape is None:
        return result
    ids = tuple(t.node_id if t.is_tracked_by(tape) else None for t in inputs)
    if all(i is None for i in ids):
        return result
    result.node_id = tape._append(TapeNode(kind, ids, saved, backward_fn))
    result._tape = tape
    return result


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum out broadcast axes so ``grad`` matches ``shape``"""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> Tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError.mismatch(op, a.shape, b.shape) from None


def _require_finite(op: str, a: Tensor) -> None:
    if not np.all(np.isfinite(a.data)):
        raise NonFiniteError(f"{op}: input contains non-finite values")


def _normalize_axes(axis: Axis, ndim: int) -> Tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    return tuple(sorted(a % ndim for a in axes))


# elementwise arithmetic

def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)
    return _record("add", (a, b), a.data + b.data,
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def subtract(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("subtract", a, b)
    return _record("subtract", (a, b), a.data - b.data,
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def multiply(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("multiply", a, b)
    return _record("multiply", (a, b), a.data * b.data,
                   lambda g: (_unbroadcast(g * b.data, a.shape),
                              _unbroadcast(g * a.data, b.shape)),
                   saved=(a.data, b.data))


def divide(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("divide", a, b)
    return _record("divide", (a, b), a.data / b.data,
                   lambda g: (_unbroadcast(g / b.data, a.shape),
                              _unbroadcast(-g * a.data / (b.data * b.data), b.shape)),
                   saved=(a.data, b.data))


def negate(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    return _record("negate", (a,), -a.data, lambda g: (-g,))


def broadcast_to(a: ArrayLike, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    shape = tuple(shape)
    try:
        out = np.broadcast_to(a.data, shape)
    except ValueError:
        raise ShapeError.mismatch("broadcast_to", a.shape, shape) from None
    return _record("broadcast_to", (a,), out, lambda g: (_unbroadcast(g, a.shape),))


# unary functions

def exp(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _record("exp", (a,), out, lambda g: (g * out,), saved=(out,))


def log(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    _require_finite("log", a)
    if np.any(a.data <= 0):
        raise NonFiniteError("log: input has non-positive entries")
    return _record("log", (a,), np.log(a.data), lambda g: (g / a.data,), saved=(a.data,))


def sqrt(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data < 0):
        raise NonFiniteError("sqrt: input has negative entries")
    out = np.sqrt(a.data)
    return _record("sqrt", (a,), out, lambda g: (g / (2.0 * out),), saved=(out,))


def absolute(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    return _record("abs", (a,), np.abs(a.data), lambda g: (g * np.sign(a.data),))


def gelu(a: ArrayLike) -> Tensor:
    """Exact GELU, x * Phi(x)"""
    a = as_tensor(a)
    x = a.data
    cdf = 0.5 * (1.0 + erf(x / np.sqrt(2.0)))
    pdf = np.exp(-0.5 * x * x) / np.sqrt(2.0 * np.pi)
    return _record("gelu", (a,), x * cdf, lambda g: (g * (cdf + x * pdf),))


def stop_gradient(a: ArrayLike) -> Tensor:
    return Tensor._wrap(as_tensor(a).data)


# reductions

def tensor_sum(a: ArrayLike, axis: Axis = None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _normalize_axes(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def _backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _record("sum", (a,), out, _backward)


def mean(a: ArrayLike, axis: Axis = None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _normalize_axes(axis, a.ndim)
    count = int(np.prod([a.shape[i] for i in axes])) if axes else 1
    return tensor_sum(a, axes, keepdims) / float(count)


def _extremum(kind: str, a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    if a.size == 0:
        raise ShapeError(f"{kind}: empty tensor")
    flat_index = int(np.argmax(a.data) if kind == "amax" else np.argmin(a.data))

    def _backward(g):
        grad = np.zeros(a.size)
        grad[flat_index] = float(g)
        return (grad.reshape(a.shape),)

    return _record(kind, (a,), a.data.reshape(-1)[flat_index], _backward)


def amax(a: ArrayLike) -> Tensor:
    """Maximum over all entries; the gradient goes to the first maximiser"""
    return _extremum("amax", a)


def amin(a: ArrayLike) -> Tensor:
    """Minimum over all entries; the gradient goes to the first minimiser"""
    return _extremum("amin", a)


def logsumexp(a: ArrayLike, axis: int = -1, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    if np.any(np.isnan(a.data)) or np.any(a.data == np.inf):
        raise NonFiniteError("logsumexp: input contains nan or +inf")
    out = _logsumexp(a.data, axis=axis, keepdims=True)
    if not np.all(np.isfinite(out)):
        raise NonFiniteError("logsumexp: result is not finite")
    weights = np.exp(a.data - out)
    result = out if keepdims else np.squeeze(out, axis=axis)

    def _backward(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (g * weights,)

    return _record("logsumexp", (a,), result, _backward, saved=(weights,))


def softmax(a: ArrayLike, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    _require_finite("softmax", a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def _backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _record("softmax", (a,), out, _backward, saved=(out,))


def log_softmax(a: ArrayLike, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    _require_finite("log_softmax", a)
    out = a.data - _logsumexp(a.data, axis=axis, keepdims=True)
    probs = np.exp(out)

    def _backward(g):
        return (g - probs * g.sum(axis=axis, keepdims=True),)

    return _record("log_softmax", (a,), out, _backward, saved=(probs,))


def layer_norm(x: ArrayLike, weight: Optional[Tensor] = None, bias: Optional[Tensor] = None,
               eps: float = LAYER_NORM_EPS) -> Tensor:
    """Normalize over the last axis, then apply the optional affine map"""
    x = as_tensor(x)
    width = x.shape[-1]
    for name, p in (("weight", weight), ("bias", bias)):
        if p is not None and p.shape != (width,):
            raise ShapeError.mismatch(f"layer_norm {name}", x.shape, p.shape)

    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    inv_std = 1.0 / np.sqrt((centered * centered).mean(axis=-1, keepdims=True) + eps)
    xhat = centered * inv_std
    w = weight.data if weight is not None else np.ones(width)
    b = bias.data if bias is not None else np.zeros(width)
    out = xhat * w + b

    def _backward(g):
        lead = tuple(range(g.ndim - 1))
        gxhat = g * w
        gx = inv_std * (gxhat - gxhat.mean(axis=-1, keepdims=True)
                        - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True))
        gw = (g * xhat).sum(axis=lead) if weight is not None else None
        gb = g.sum(axis=lead) if bias is not None else None
        return gx, gw, gb

    inputs = (x, weight if weight is not None else Tensor(0.0),
              bias if bias is not None else Tensor(0.0))
    return _record("layer_norm", inputs, out, _backward, saved=(xhat, inv_std))


# shape manipulation

def matmul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError.mismatch("matmul", a.shape, b.shape)
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeError.mismatch("matmul", a.shape, b.shape) from None

    def _backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _record("matmul", (a, b), out, _backward, saved=(a.data, b.data))


def transpose(a: ArrayLike, axes: Optional[Sequence[int]] = None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(axes)
    if sorted(ax % a.ndim for ax in axes) != list(range(a.ndim)):
        raise ShapeError(f"transpose: axes {axes} do not permute shape {a.shape}")
    inverse = tuple(np.argsort(axes))
    return _record("transpose", (a,), np.transpose(a.data, axes),
                   lambda g: (np.transpose(g, inverse),))


def reshape(a: ArrayLike, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(tuple(shape))
    except ValueError:
        raise ShapeError.mismatch("reshape", a.shape, tuple(shape)) from None
    return _record("reshape", (a,), out, lambda g: (g.reshape(a.shape),))


def concatenate(tensors: Sequence[ArrayLike], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concatenate: no inputs")
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError.mismatch("concatenate", *(t.shape for t in tensors)) from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _record("concatenate", tensors, out,
                   lambda g: tuple(np.split(g, bounds, axis=axis)))


def stack(tensors: Sequence[ArrayLike], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("stack: no inputs")
    try:
        out = np.stack([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError.mismatch("stack", *(t.shape for t in tensors)) from None
    return _record("stack", tensors, out,
                   lambda g: tuple(np.take(g, i, axis=axis) for i in range(len(tensors))))


def take(a: ArrayLike, axis: int, start: int, stop: int) -> Tensor:
    """Contiguous slice ``start:stop`` along ``axis``"""
    a = as_tensor(a)
    axis = axis % a.ndim
    if not 0 <= start < stop <= a.shape[axis]:
        raise ShapeError(f"take: range {start}:{stop} outside axis {axis} of {a.shape}")
    index = [slice(None)] * a.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)

    def _backward(g):
        grad = np.zeros(a.shape)
        grad[index] = g
        return (grad,)

    return _record("take", (a,), a.data[index], _backward)


def split(a: ArrayLike, sections: Union[int, Sequence[int]], axis: int = 0) -> List[Tensor]:
    """Split into ``sections`` equal parts, or parts of the listed sizes"""
    a = as_tensor(a)
    length = a.shape[axis]
    if isinstance(sections, int):
        if sections <= 0 or length % sections != 0:
            raise ShapeError(f"split: axis of length {length} not divisible into {sections}")
        sizes = [length // sections] * sections
    else:
        sizes = list(sections)
        if sum(sizes) != length or any(s <= 0 for s in sizes):
            raise ShapeError(f"split: sizes {sizes} do not partition length {length}")
    parts, start = [], 0
    for size in sizes:
        parts.append(take(a, axis, start, start + size))
        start += size
    return parts


def select(a: ArrayLike, axis: int, index: int) -> Tensor:
    """Pick one index along ``axis``, dropping that axis"""
    a = as_tensor(a)
    axis = axis % a.ndim
    if not 0 <= index < a.shape[axis]:
        raise ShapeError(f"select: index {index} out of range for axis {axis} of {a.shape}")

    def _backward(g):
        grad = np.zeros(a.shape)
        slot = [slice(None)] * a.ndim
        slot[axis] = index
        grad[tuple(slot)] = g
        return (grad,)

    return _record("select", (a,), np.take(a.data, index, axis=axis), _backward)


# composite helpers

def l1_distance(a: ArrayLike, b: ArrayLike) -> Tensor:
    """Mean absolute difference"""
    return mean(absolute(subtract(a, b)))


def conv2d_3x3(x: ArrayLike, weight: ArrayLike, bias: Optional[ArrayLike] = None) -> Tensor:
    """3x3 cross-correlation, stride 1, zero padding 1.

    ``x`` is Cin x H x W, ``weight`` is Cout x Cin x 3 x 3, ``bias`` is Cout.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 3 or weight.ndim != 4 or weight.shape[1:] != (x.shape[0], 3, 3):
        raise ShapeError.mismatch("conv2d_3x3", x.shape, weight.shape)
    c_out = weight.shape[0]
    c_in, height, width = x.shape
    b = as_tensor(bias) if bias is not None else Tensor(np.zeros(c_out))
    if b.shape != (c_out,):
        raise ShapeError.mismatch("conv2d_3x3 bias", weight.shape, b.shape)

    padded = np.pad(x.data, ((0, 0), (1, 1), (1, 1)))
    cols = sliding_window_view(padded, (3, 3), axis=(1, 2))
    cols = cols.transpose(0, 3, 4, 1, 2).reshape(c_in * 9, height * width)
    w2 = weight.data.reshape(c_out, c_in * 9)
    out = (w2 @ cols + b.data[:, None]).reshape(c_out, height, width)

    def _backward(g):
        g2 = g.reshape(c_out, height * width)
        gw = (g2 @ cols.T).reshape(weight.shape)
        gb = g2.sum(axis=1)
        gcols = (w2.T @ g2).reshape(c_in, 3, 3, height, width)
        gpad = np.zeros((c_in, height + 2, width + 2))
        for di in range(3):
            for dj in range(3):
                gpad[:, di:di + height, dj:dj + width] += gcols[:, di, dj]
        return gpad[:, 1:-1, 1:-1], gw, gb

    return _record("conv2d_3x3", (x, weight, b), out, _backward, saved=(cols,))


def interpolation_matrix(n_out: int, n_in: int) -> np.ndarray:
    """Corner-aligned linear interpolation weights, n_out x n_in"""
    weights = np.zeros((n_out, n_in))
    if n_in == 1 or n_out == 1:
        weights[:, 0] = 1.0
        return weights
    src = np.arange(n_out) * (n_in - 1) / (n_out - 1)
    lo = np.minimum(np.floor(src).astype(int), n_in - 2)
    frac = src - lo
    rows = np.arange(n_out)
    weights[rows, lo] += 1.0 - frac
    weights[rows, lo + 1] += frac
    return weights


def upsample_bilinear(x: ArrayLike, size: Tuple[int, int]) -> Tensor:
    """Bilinear resize of the last two axes to ``size`` with corner-aligned sampling"""
    x = as_tensor(x)
    if x.ndim < 2:
        raise ShapeError(f"upsample_bilinear: need at least 2 axes, got {x.shape}")
    ry = interpolation_matrix(size[0], x.shape[-2])
    rx = interpolation_matrix(size[1], x.shape[-1])
    out = ry @ x.data @ rx.T
    return _record("upsample_bilinear", (x,), out, lambda g: (ry.T @ g @ rx,))
