"""
Dense float64 tensors with tape-based reverse-mode differentiation.

Every operation executed while a ``Tape`` is active is appended to that tape
(a Wengert list) as soon as one of its inputs requires a gradient. Outside a
tape nothing is recorded, which is how evaluation runs.

    with Tape() as tape:
        loss = (w @ x).sum()
    tape.backward(loss)
    w.grad  # same shape as w
"""

import threading
import weakref
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
from scipy import special

from modules.errors import DMambaError, ShapeError

_SOFTPLUS_LINEAR_ABOVE = 30.0
_TINY = np.finfo(np.float64).tiny
_SQRT_2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)

_local = threading.local()


def _tape_stack():
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


def current_tape():
    """Return the innermost active tape of this thread, or None."""
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    """Row-major float64 array with an optional gradient buffer."""

    def __init__(self, data, requires_grad=False, copy=True):
        array = np.array(data, dtype=np.float64) if copy else np.asarray(data, dtype=np.float64)
        self.data = array
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._is_leaf = True
        self._tape_ref: Optional[weakref.ref] = None

    @property
    def _tape(self) -> Optional["Tape"]:
        return None if self._tape_ref is None else self._tape_ref()

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data, copy=False)

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, grad: np.ndarray):
        if grad.shape != self.data.shape:
            raise ShapeError(f"gradient shape {grad.shape} does not match tensor shape {self.shape}")
        self.grad = grad.copy() if self.grad is None else self.grad + grad

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

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

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    def sum(self, axes=None, keepdims=False):
        return reduce("sum", self, axes, keepdims)

    def mean(self, axes=None, keepdims=False):
        return reduce("mean", self, axes, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def exp(self):
        return exp(self)


@dataclass
class TapeRecord:
    op: str
    inputs: Tuple[Tensor, ...]
    output: Tensor
    backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Tape:
    """Ordered record of executed operations with their backward rules."""

    def __init__(self):
        self.records = []
        self.spent = False

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()
        return False

    def __len__(self):
        return len(self.records)

    def backward(self, loss: Tensor):
        """Replay recorded rules in reverse; gradients accumulate into leaves."""
        if loss.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        seed = np.ones_like(loss.data)
        if loss._is_leaf:
            if loss.requires_grad:
                loss._accumulate(seed)
            return
        if self.spent:
            raise DMambaError("tape was already replayed; record the step again")
        if loss._tape is not self:
            raise DMambaError("loss was not recorded on this tape")

        pending = {id(loss): seed}
        for record in reversed(self.records):
            grad = pending.pop(id(record.output), None)
            if grad is None:
                continue
            for tensor, input_grad in zip(record.inputs, record.backward(grad)):
                if input_grad is None or not tensor.requires_grad:
                    continue
                if tensor._is_leaf:
                    tensor._accumulate(input_grad)
                else:
                    key = id(tensor)
                    pending[key] = pending[key] + input_grad if key in pending else input_grad

        # leaves used on this tape but unreachable from the loss get a zero gradient
        for record in self.records:
            for tensor in record.inputs:
                if tensor._is_leaf and tensor.requires_grad and tensor.grad is None:
                    tensor.grad = np.zeros_like(tensor.data)
        # drop the graph so intermediates are freed without the cycle collector
        self.records.clear()
        self.spent = True


def backward(loss: Tensor):
    """Backpropagate from a scalar loss through the tape that recorded it."""
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._tape is None:
        if loss._is_leaf and loss.requires_grad:
            loss._accumulate(np.ones_like(loss.data))
            return
        raise DMambaError("loss was not produced under an active tape")
    loss._tape.backward(loss)


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value, copy=False)


def record(op: str, data: np.ndarray, inputs: Sequence[Tensor], rule) -> Tensor:
    """Wrap ``data`` as an op output and append it to the active tape if needed.

    ``rule`` maps the output gradient to one gradient (or None) per input.
    """
    out = Tensor(data, copy=False)
    tape = current_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._is_leaf = False
        out._tape_ref = weakref.ref(tape)
        tape.records.append(TapeRecord(op, tuple(inputs), out, rule))
    return out


def unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of trailing-dimension broadcasting)."""
    shape = tuple(shape)
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def broadcast_shape(a_shape, b_shape):
    try:
        return np.broadcast_shapes(tuple(a_shape), tuple(b_shape))
    except ValueError:
        raise ShapeError(
            f"shapes {tuple(a_shape)} and {tuple(b_shape)} are not broadcast-compatible"
        ) from None


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    broadcast_shape(a.shape, b.shape)
    return record(
        "add",
        a.data + b.data,
        (a, b),
        lambda g: (unbroadcast(g, a.shape), unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    broadcast_shape(a.shape, b.shape)
    return record(
        "sub",
        a.data - b.data,
        (a, b),
        lambda g: (unbroadcast(g, a.shape), unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    broadcast_shape(a.shape, b.shape)
    return record(
        "mul",
        a.data * b.data,
        (a, b),
        lambda g: (unbroadcast(g * b.data, a.shape), unbroadcast(g * a.data, b.shape)),
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    broadcast_shape(a.shape, b.shape)
    return record(
        "div",
        a.data / b.data,
        (a, b),
        lambda g: (
            unbroadcast(g / b.data, a.shape),
            unbroadcast(-g * a.data / (b.data * b.data), b.shape),
        ),
    )


def neg(a) -> Tensor:
    a = as_tensor(a)
    return record("neg", -a.data, (a,), lambda g: (-g,))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return record("exp", out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    return record("log", np.log(a.data), (a,), lambda g: (g / a.data,))


def reciprocal(a) -> Tensor:
    a = as_tensor(a)
    out = 1.0 / a.data
    return record("reciprocal", out, (a,), lambda g: (-g * out * out,))


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    p = float(exponent)
    return record(
        "power", a.data**p, (a,), lambda g: (g * p * a.data ** (p - 1.0),)
    )


_BINARY = {"add": add, "sub": sub, "mul": mul, "div": div}
_UNARY = {"neg": neg, "exp": exp, "reciprocal": reciprocal, "log": log}


def elementwise(op: str, a, b=None) -> Tensor:
    """Dispatch an elementwise operation by name."""
    if op in _BINARY:
        if b is None:
            raise ShapeError(f"elementwise '{op}' needs two operands")
        return _BINARY[op](a, b)
    if op in _UNARY:
        return _UNARY[op](a)
    raise ValueError(f"unknown elementwise op '{op}'")


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------


def softplus(x) -> Tensor:
    """ln(1 + e^x), returning x itself above 30.

    The result never drops below the smallest positive float, so step sizes
    built from it stay strictly positive for very negative inputs.
    """
    x = as_tensor(x)
    smooth = np.maximum(np.logaddexp(0.0, x.data), _TINY)
    out = np.where(x.data > _SOFTPLUS_LINEAR_ABOVE, x.data, smooth)
    return record("softplus", out, (x,), lambda g: (g * special.expit(x.data),))


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    out = special.expit(x.data)
    return record("sigmoid", out, (x,), lambda g: (g * out * (1.0 - out),))


def silu(x) -> Tensor:
    x = as_tensor(x)
    s = special.expit(x.data)
    return record(
        "silu", x.data * s, (x,), lambda g: (g * (s + x.data * s * (1.0 - s)),)
    )


def gelu(x) -> Tensor:
    """Exact GELU, x * Phi(x) with the erf-based Gaussian CDF."""
    x = as_tensor(x)
    cdf = 0.5 * (1.0 + special.erf(x.data / _SQRT_2))
    pdf = _INV_SQRT_2PI * np.exp(-0.5 * x.data * x.data)
    return record("gelu", x.data * cdf, (x,), lambda g: (g * (cdf + x.data * pdf),))


def relu(x) -> Tensor:
    x = as_tensor(x)
    return record(
        "relu", np.maximum(x.data, 0.0), (x,), lambda g: (g * (x.data > 0.0),)
    )


def tanh(x) -> Tensor:
    x = as_tensor(x)
    out = np.tanh(x.data)
    return record("tanh", out, (x,), lambda g: (g * (1.0 - out * out),))


_ACTIVATIONS = {
    "softplus": softplus,
    "silu": silu,
    "gelu": gelu,
    "relu": relu,
    "tanh": tanh,
    "sigmoid": sigmoid,
}


def activation(kind: str, x) -> Tensor:
    try:
        fn = _ACTIVATIONS[kind]
    except KeyError:
        raise ValueError(f"unknown activation '{kind}'") from None
    return fn(x)


def log_softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    out = x.data - special.logsumexp(x.data, axis=axis, keepdims=True)

    def rule(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return record("log_softmax", out, (x,), rule)


# ---------------------------------------------------------------------------
# contraction and reduction
# ---------------------------------------------------------------------------


def matmul(a, b) -> Tensor:
    """Batched matrix product over the last two axes; batch axes broadcast."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs at least 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner extents differ: {a.shape} @ {b.shape}")
    broadcast_shape(a.shape[:-2], b.shape[:-2])

    def rule(g):
        grad_a = g @ np.swapaxes(b.data, -1, -2)
        grad_b = np.swapaxes(a.data, -1, -2) @ g
        return unbroadcast(grad_a, a.shape), unbroadcast(grad_b, b.shape)

    return record("matmul", a.data @ b.data, (a, b), rule)


def _normalize_axes(axes, ndim):
    if axes is None:
        return tuple(range(ndim))
    if isinstance(axes, (int, np.integer)):
        axes = (int(axes),)
    normalized = []
    for axis in axes:
        if not -ndim <= axis < ndim:
            raise ShapeError(f"axis {axis} is out of range for a {ndim}-D tensor")
        normalized.append(axis % ndim)
    if len(set(normalized)) != len(normalized):
        raise ShapeError(f"repeated axis in {tuple(axes)}")
    return tuple(sorted(normalized))


def reduce(kind: str, x, axes=None, keepdims: bool = False) -> Tensor:
    """Sum or mean over ``axes`` (all axes by default)."""
    x = as_tensor(x)
    axes = _normalize_axes(axes, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    if kind == "sum":
        scale = 1.0
    elif kind == "mean":
        scale = 1.0 / count if count else 0.0
    else:
        raise ValueError(f"unknown reduction '{kind}'")
    out = x.data.sum(axis=axes, keepdims=keepdims) * scale
    kept_shape = tuple(1 if i in axes else n for i, n in enumerate(x.shape))

    def rule(g):
        return (np.broadcast_to(g.reshape(kept_shape) * scale, x.shape).copy(),)

    return record(kind, out, (x,), rule)


def sum(x, axes=None, keepdims=False) -> Tensor:  # noqa: A001
    return reduce("sum", x, axes, keepdims)


def mean(x, axes=None, keepdims=False) -> Tensor:
    return reduce("mean", x, axes, keepdims)


# ---------------------------------------------------------------------------
# shape operations
# ---------------------------------------------------------------------------


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    try:
        out = x.data.reshape(tuple(shape))
    except ValueError:
        raise ShapeError(f"cannot reshape {x.shape} ({x.size} elements) into {tuple(shape)}") from None
    return record("reshape", out, (x,), lambda g: (g.reshape(x.shape),))


def expand_dims(x, axis: int) -> Tensor:
    x = as_tensor(x)
    return reshape(x, np.expand_dims(x.data, axis).shape)


def transpose(x, axes=None) -> Tensor:
    x = as_tensor(x)
    axes = tuple(range(x.ndim))[::-1] if axes is None else tuple(axes)
    if sorted(a % x.ndim for a in axes) != list(range(x.ndim)):
        raise ShapeError(f"invalid permutation {axes} for shape {x.shape}")
    inverse = tuple(np.argsort([a % x.ndim for a in axes]))
    return record(
        "transpose", x.data.transpose(axes), (x,), lambda g: (g.transpose(inverse),)
    )


def getitem(x, key) -> Tensor:
    """Basic or integer-array indexing; backward scatters into original positions."""
    x = as_tensor(x)
    out = x.data[key]

    def rule(g):
        full = np.zeros_like(x.data)
        np.add.at(full, key, g)
        return (full,)

    return record("getitem", np.array(out, dtype=np.float64), (x,), rule)


def slice_axis(x, axis: int, start: int, stop: int, step: int = 1) -> Tensor:
    x = as_tensor(x)
    axis = _normalize_axes(axis, x.ndim)[0]
    key = [slice(None)] * x.ndim
    key[axis] = slice(start, stop, step)
    return getitem(x, tuple(key))


def take_rows(table, ids) -> Tensor:
    """Gather rows of a 2-D table by integer ids (any shape)."""
    table = as_tensor(table)
    ids = np.asarray(ids)
    if ids.size and not np.issubdtype(ids.dtype, np.integer):
        raise ShapeError(f"row ids must be integers, got dtype {ids.dtype}")
    ids = ids.astype(np.int64)
    rows = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= rows):
        raise ShapeError(f"row id out of range [0, {rows}): min {ids.min()}, max {ids.max()}")

    def rule(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids, g)
        return (full,)

    return record("take_rows", table.data[ids], (table,), rule)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat needs at least one tensor")
    ndim = tensors[0].ndim
    axis = _normalize_axes(axis, ndim)[0]
    for t in tensors[1:]:
        if t.ndim != ndim or any(
            t.shape[i] != tensors[0].shape[i] for i in range(ndim) if i != axis
        ):
            raise ShapeError(
                f"cannot concat shapes {[t.shape for t in tensors]} along axis {axis}"
            )
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    return record(
        "concat", out, tuple(tensors), lambda g: tuple(np.split(g, sizes, axis=axis))
    )


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    shapes = {t.shape for t in tensors}
    if len(shapes) != 1:
        raise ShapeError(f"cannot stack shapes {[t.shape for t in tensors]}")
    out = np.stack([t.data for t in tensors], axis=axis)
    return record(
        "stack",
        out,
        tuple(tensors),
        lambda g: tuple(np.take(g, i, axis=axis) for i in range(len(tensors))),
    )


def broadcast_to(x, shape) -> Tensor:
    x = as_tensor(x)
    shape = tuple(shape)
    if broadcast_shape(x.shape, shape) != shape:
        raise ShapeError(f"cannot broadcast {x.shape} to {shape}")
    return record(
        "broadcast_to",
        np.broadcast_to(x.data, shape).copy(),
        (x,),
        lambda g: (unbroadcast(g, x.shape),),
    )


_SHAPE_OPS = {
    "reshape": reshape,
    "transpose": transpose,
    "slice": slice_axis,
    "concat": concat,
    "broadcast_to": broadcast_to,
}


def shape_op(kind: str, *args, **kwargs) -> Tensor:
    try:
        fn = _SHAPE_OPS[kind]
    except KeyError:
        raise ValueError(f"unknown shape op '{kind}'") from None
    return fn(*args, **kwargs)
