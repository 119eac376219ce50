"""Dense NumPy-backed tensors with tape-based reverse-mode differentiation.

Every differentiable operation appends a :class:`Record` to the tape. Records
carry a monotonically increasing sequence number, so sorting the records
reachable from a loss by that number yields a topological order: an
operation's inputs always precede it. :func:`backward` replays that order in
reverse.

Broadcasting is deliberately narrow. Binary elementwise ops accept operands of
identical shape, or one operand of shape ``()``. Everything else (bias rows,
per-row scales, batch expansion) goes through a named op with its own adjoint.
"""

from __future__ import annotations

import contextlib
import itertools
import threading
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import erf

__all__ = [
    "ContractError",
    "DimensionError",
    "NumericError",
    "Record",
    "Tape",
    "Tensor",
    "add_trailing",
    "backward",
    "cdist",
    "concat",
    "expand",
    "gelu",
    "get_precision",
    "grad_enabled",
    "l2_normalize_rows",
    "layer_norm",
    "log_softmax",
    "matmul",
    "mean",
    "no_grad",
    "precision",
    "relu",
    "row_max",
    "row_min",
    "scale_rows",
    "set_precision",
    "softmax_rows",
    "stack",
    "tensor",
]


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class ContractError(RuntimeError):
    """A documented precondition was violated."""


class NumericError(ArithmeticError):
    """Non-finite input where finite values are required."""


# --------------------------------------------------------------------------
# precision and grad modes
# --------------------------------------------------------------------------

_PRECISIONS = {"float64": np.float64, "float32": np.float32}
_precision = "float64"
_local = threading.local()
_seq = itertools.count()


def get_precision() -> str:
    return _precision


def set_precision(name: str) -> None:
    """Set the global floating-point mode ('float64' or 'float32')."""
    global _precision
    if name not in _PRECISIONS:
        raise ValueError(f"unknown precision {name!r}; expected one of {sorted(_PRECISIONS)}")
    _precision = name


@contextlib.contextmanager
def precision(name: str):
    previous = get_precision()
    set_precision(name)
    try:
        yield
    finally:
        set_precision(previous)


def float_dtype():
    return _PRECISIONS[_precision]


def grad_enabled() -> bool:
    return getattr(_local, "grad_enabled", True)


@contextlib.contextmanager
def no_grad():
    """Run operations without recording them on the tape."""
    previous = grad_enabled()
    _local.grad_enabled = False
    try:
        yield
    finally:
        _local.grad_enabled = previous


# --------------------------------------------------------------------------
# core types
# --------------------------------------------------------------------------


class Record:
    """One executed operation: its inputs, output and adjoint rule."""

    __slots__ = ("seq", "op", "inputs", "output", "adjoint")

    def __init__(self, op: str, inputs: tuple, output: "Tensor", adjoint: Callable):
        self.seq = next(_seq)
        self.op = op
        self.inputs = inputs
        self.output = output
        self.adjoint = adjoint

    def __repr__(self) -> str:
        return f"Record(seq={self.seq}, op={self.op!r})"


class Tape:
    """Records reachable from an output, in execution order."""

    def __init__(self, records: list[Record]):
        self.records = records

    @classmethod
    def from_output(cls, output: "Tensor") -> "Tape":
        seen: set[int] = set()
        found: list[Record] = []
        stack = [output]
        while stack:
            t = stack.pop()
            rec = t._record
            if rec is None or id(rec) in seen:
                continue
            seen.add(id(rec))
            found.append(rec)
            stack.extend(rec.inputs)
        found.sort(key=lambda r: r.seq)
        return cls(found)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)


def _as_array(data) -> np.ndarray:
    arr = np.asarray(data)
    if arr.dtype == np.uint8:
        return arr
    return arr.astype(float_dtype(), copy=False)


class Tensor:
    """A dense row-major array that may participate in differentiation.

    ``data`` is a NumPy array in the current precision (``uint8`` arrays are
    kept as-is for masks and raw image storage). ``grad`` is populated by
    :func:`backward` for leaf tensors with ``requires_grad=True``.
    """

    __slots__ = ("data", "requires_grad", "grad", "_record", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = _as_array(data)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._record: Record | None = None
        self.name = name

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
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self._record is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __len__(self) -> int:
        return self.shape[0]

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
        if isinstance(other, Tensor):
            raise TypeError("division by a Tensor is not supported; use mul with a reciprocal")
        return mul(self, 1.0 / float(other))

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    def sum(self, axis=None):
        return sum_(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)


def tensor(data, requires_grad: bool = False, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name)


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, inputs: Sequence[Tensor], adjoint: Callable, op: str) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = None
    out._record = None
    out.requires_grad = False
    if grad_enabled() and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._record = Record(op, tuple(inputs), out, adjoint)
    return out


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every leaf upstream of a scalar ``loss``.

    Leaf gradients accumulate across calls; call ``zero_grad`` between steps.
    """
    if loss.ndim != 0:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    if loss.is_leaf:
        seed = np.ones((), dtype=loss.dtype)
        loss.grad = seed if loss.grad is None else loss.grad + seed
        return
    tape = Tape.from_output(loss)
    pending: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=loss.dtype)}
    for rec in reversed(tape.records):
        g = pending.pop(id(rec.output), None)
        if g is None:
            continue
        for inp, gi in zip(rec.inputs, rec.adjoint(g)):
            if gi is None or not inp.requires_grad:
                continue
            if inp._record is None:
                inp.grad = gi.copy() if inp.grad is None else inp.grad + gi
            else:
                key = id(inp)
                pending[key] = gi if key not in pending else pending[key] + gi


# --------------------------------------------------------------------------
# elementwise
# --------------------------------------------------------------------------


def _check_binary(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape and a.ndim != 0 and b.ndim != 0:
        raise DimensionError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


def _unbroadcast(g: np.ndarray, t: Tensor) -> np.ndarray:
    if t.ndim == 0 and g.ndim != 0:
        return np.asarray(g.sum(), dtype=g.dtype)
    return g


def add(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _check_binary(a, b, "add")
    return _result(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a), _unbroadcast(g, b)),
        "add",
    )


def sub(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _check_binary(a, b, "sub")
    return _result(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a), _unbroadcast(-g, b)),
        "sub",
    )


def mul(a, b) -> Tensor:
    """Hadamard product (or scaling, when one side has shape ``()``)."""
    a, b = _lift(a), _lift(b)
    _check_binary(a, b, "mul")
    ad, bd = a.data, b.data
    return _result(
        ad * bd,
        (a, b),
        lambda g: (_unbroadcast(g * bd, a), _unbroadcast(g * ad, b)),
        "mul",
    )


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return _result(out, (x,), lambda g: (g * out,), "exp")


def log(x: Tensor) -> Tensor:
    xd = x.data
    return _result(np.log(xd), (x,), lambda g: (g / xd,), "log")


def relu(x: Tensor) -> Tensor:
    xd = x.data
    return _result(np.maximum(xd, 0), (x,), lambda g: (g * (xd > 0),), "relu")


_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


def gelu(x: Tensor) -> Tensor:
    """Exact GELU, ``x * Phi(x)`` with the Gaussian CDF (not the tanh form)."""
    xd = x.data
    cdf = 0.5 * (1.0 + erf(xd * _INV_SQRT2))
    pdf = _INV_SQRT2PI * np.exp(-0.5 * xd * xd)
    return _result((xd * cdf).astype(xd.dtype), (x,), lambda g: (g * (cdf + xd * pdf),), "gelu")


# --------------------------------------------------------------------------
# structural
# --------------------------------------------------------------------------


def reshape(x: Tensor, shape) -> Tensor:
    src = x.shape
    return _result(x.data.reshape(shape), (x,), lambda g: (g.reshape(src),), "reshape")


def transpose(x: Tensor, axes=None) -> Tensor:
    axes = tuple(range(x.ndim))[::-1] if axes is None else tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _result(x.data.transpose(axes), (x,), lambda g: (g.transpose(inverse),), "transpose")


def swap_last(x: Tensor) -> Tensor:
    axes = list(range(x.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(x, axes)


def take(x: Tensor, index) -> Tensor:
    """NumPy-style indexing; repeated indices accumulate in the adjoint."""

    def adjoint(g):
        full = np.zeros_like(x.data)
        np.add.at(full, index, g)
        return (full,)

    return _result(np.array(x.data[index]), (x,), adjoint, "take")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_lift(t) for t in tensors]
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(t.shape[i] != ref[i] for i in range(len(ref)) if i != ax):
            raise DimensionError(f"concat: shapes {ref} and {t.shape} disagree off axis {axis}")
    cuts = np.cumsum([t.shape[ax] for t in tensors])[:-1]
    return _result(
        np.concatenate([t.data for t in tensors], axis=ax),
        tensors,
        lambda g: tuple(np.split(g, cuts, axis=ax)),
        "concat",
    )


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_lift(t) for t in tensors]
    for t in tensors[1:]:
        if t.shape != tensors[0].shape:
            raise DimensionError(f"stack: shapes {tensors[0].shape} and {t.shape} differ")
    ax = axis % (tensors[0].ndim + 1)
    return _result(
        np.stack([t.data for t in tensors], axis=ax),
        tensors,
        lambda g: tuple(np.take(g, i, axis=ax) for i in range(len(tensors))),
        "stack",
    )


def expand(x: Tensor, n: int) -> Tensor:
    """Repeat ``x`` along a new leading axis of length ``n``."""
    return _result(
        np.broadcast_to(x.data, (n,) + x.shape),
        (x,),
        lambda g: (g.sum(axis=0),),
        "expand",
    )


def add_trailing(x: Tensor, b: Tensor) -> Tensor:
    """``x + b`` where ``b.shape`` equals the trailing dims of ``x`` (bias add)."""
    x, b = _lift(x), _lift(b)
    if b.ndim > x.ndim or x.shape[x.ndim - b.ndim:] != b.shape:
        raise DimensionError(f"add_trailing: {b.shape} is not a suffix of {x.shape}")
    lead = tuple(range(x.ndim - b.ndim))
    return _result(x.data + b.data, (x, b), lambda g: (g, g.sum(axis=lead)), "add_trailing")


def scale_rows(x: Tensor, s: Tensor) -> Tensor:
    """Multiply every last-axis row of ``x`` by the matching entry of ``s``."""
    x, s = _lift(x), _lift(s)
    if s.shape != x.shape[:-1]:
        raise DimensionError(f"scale_rows: scale shape {s.shape} vs rows of {x.shape}")
    xd, sd = x.data, s.data[..., None]
    return _result(
        xd * sd,
        (x, s),
        lambda g: (g * sd, (g * xd).sum(axis=-1)),
        "scale_rows",
    )


# --------------------------------------------------------------------------
# reductions
# --------------------------------------------------------------------------


def sum_(x: Tensor, axis=None) -> Tensor:
    shape = x.shape
    if axis is None:
        return _result(
            np.asarray(x.data.sum(), dtype=x.dtype),
            (x,),
            lambda g: (np.broadcast_to(g, shape),),
            "sum",
        )
    ax = axis % x.ndim
    return _result(
        x.data.sum(axis=ax),
        (x,),
        lambda g: (np.broadcast_to(np.expand_dims(g, ax), shape),),
        "sum",
    )


def mean(x: Tensor, axis=None) -> Tensor:
    n = x.size if axis is None else x.shape[axis]
    return mul(sum_(x, axis), 1.0 / n)


def _row_extreme(x: Tensor, pick, op: str) -> Tensor:
    xd = x.data
    idx = pick(xd, axis=-1)[..., None]
    val = np.take_along_axis(xd, idx, axis=-1)

    def adjoint(g):
        full = np.zeros_like(xd)
        np.put_along_axis(full, idx, g.sum(axis=-1, keepdims=True), axis=-1)
        return (full,)

    return _result(np.broadcast_to(val, xd.shape), (x,), adjoint, op)


def row_max(x: Tensor) -> Tensor:
    """Row maximum broadcast back across the row (output has ``x``'s shape)."""
    return _row_extreme(x, np.argmax, "row_max")


def row_min(x: Tensor) -> Tensor:
    """Row minimum broadcast back across the row (output has ``x``'s shape)."""
    return _row_extreme(x, np.argmin, "row_min")


# --------------------------------------------------------------------------
# linear algebra
# --------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes.

    Leading (batch) axes of ``a`` and ``b`` must be identical, or ``b`` may be
    a plain 2-D matrix applied to every row of ``a``.
    """
    a, b = _lift(a), _lift(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    if b.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
        raise DimensionError(f"matmul: batch dims differ between {a.shape} and {b.shape}")
    ad, bd = a.data, b.data

    def adjoint(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        if bd.ndim == 2:
            gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = np.swapaxes(ad, -1, -2) @ g
        return ga, gb

    return _result(ad @ bd, (a, b), adjoint, "matmul")


def cdist(x: Tensor, y: Tensor, floor: float = 1e-12) -> Tensor:
    """Euclidean distances between rows: ``d[i, j] = ||x_i - y_j||``.

    Squared distances below ``floor`` are clamped (zero gradient there).
    """
    x, y = _lift(x), _lift(y)
    if x.ndim != 2 or y.ndim != 2 or x.shape[1] != y.shape[1]:
        raise DimensionError(f"cdist: widths differ between {x.shape} and {y.shape}")
    diff = x.data[:, None, :] - y.data[None, :, :]
    sq = (diff * diff).sum(axis=-1)
    live = sq > floor
    d = np.sqrt(np.where(live, sq, floor))

    def adjoint(g):
        coef = np.where(live, g / d, 0.0)[..., None] * diff
        return coef.sum(axis=1), -coef.sum(axis=0)

    return _result(d, (x, y), adjoint, "cdist")


# --------------------------------------------------------------------------
# normalisation
# --------------------------------------------------------------------------


def softmax_rows(x: Tensor) -> Tensor:
    """Softmax over the last axis, with row-max subtraction."""
    xd = x.data
    if np.isnan(xd).any():
        raise NumericError("softmax_rows: NaN in input")
    z = np.exp(xd - xd.max(axis=-1, keepdims=True))
    out = z / z.sum(axis=-1, keepdims=True)

    def adjoint(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return _result(out, (x,), adjoint, "softmax")


def log_softmax(x: Tensor) -> Tensor:
    xd = x.data
    if np.isnan(xd).any():
        raise NumericError("log_softmax: NaN in input")
    shifted = xd - xd.max(axis=-1, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))

    def adjoint(g):
        return (g - np.exp(out) * g.sum(axis=-1, keepdims=True),)

    return _result(out, (x,), adjoint, "log_softmax")


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise the last axis to zero mean / unit variance, then scale and shift."""
    if gamma.shape != x.shape[-1:] or beta.shape != x.shape[-1:]:
        raise DimensionError(f"layer_norm: affine params {gamma.shape} vs input {x.shape}")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    gd = gamma.data
    lead = tuple(range(x.ndim - 1))

    def adjoint(g):
        gh = g * gd
        gx = inv * (gh - gh.mean(axis=-1, keepdims=True)
                    - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _result(xhat * gd + beta.data, (x, gamma, beta), adjoint, "layer_norm")


def l2_normalize_rows(x: Tensor, eps: float = 1e-12) -> Tensor:
    """Divide each last-axis row by ``max(||row||, eps)``."""
    xd = x.data
    norm = np.sqrt((xd * xd).sum(axis=-1, keepdims=True))
    live = norm > eps
    denom = np.where(live, norm, eps)
    out = xd / denom

    def adjoint(g):
        radial = np.where(live, out * (g * out).sum(axis=-1, keepdims=True), 0.0)
        return ((g - radial) / denom,)

    return _result(out, (x,), adjoint, "l2_normalize")


def parameters_of(tensors: Iterable[Tensor]) -> list[Tensor]:
    return [t for t in tensors if t.requires_grad]
