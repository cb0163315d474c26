"""Dense float64 tensors with reverse-mode automatic differentiation.

Values live in numpy arrays (row-major, 64-bit). Gradient tracking is
tape-based: while a :class:`Tape` is active, every primitive operation
appends a record holding its inputs and an adjoint closure. ``Tape.backward``
replays the records in reverse and accumulates gradients into the
``requires_grad`` leaves. With no active tape, operations are plain numpy
forwards and record nothing, which is the fast path used for evaluation.
"""

from __future__ import annotations

import threading
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import AxisError, ShapeError, TapeConsumedError

_tls = threading.local()


def _tape_stack() -> list:
    stack = getattr(_tls, "stack", None)
    if stack is None:
        stack = []
        _tls.stack = stack
    return stack


def active_tape() -> Optional["Tape"]:
    """The innermost tape currently recording on this thread, if any."""
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    """A dense n-dimensional array of float64 values.

    ``data`` is always a C-contiguous float64 ndarray. ``grad`` stays None
    until a backward pass deposits a gradient (leaves only). Tensors are not
    mutated by operations; the optimizer updates parameter data in place,
    which is confined to the training loop.
    """

    __slots__ = ("data", "requires_grad", "grad", "_tape")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64, order="C")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._tape: Optional[Tape] = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def detach(self) -> "Tensor":
        """A gradient-free view sharing this tensor's data buffer."""
        out = Tensor.__new__(Tensor)
        out.data = self.data
        out.requires_grad = False
        out.grad = None
        out._tape = None
        return out

    def zero_grad(self) -> None:
        self.grad = None

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def backward(self) -> None:
        """Run the recording tape's backward pass seeded at this tensor."""
        if self._tape is None:
            raise ShapeError("tensor was not recorded on a tape")
        self._tape.backward(self)

    # Operator sugar; delegates to the module-level primitives.
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


class _Record:
    __slots__ = ("out", "inputs", "adjoint")

    def __init__(self, out: Tensor, inputs: tuple, adjoint: Callable):
        self.out = out
        self.inputs = inputs
        self.adjoint = adjoint


class Tape:
    """An ordered record of primitive operations for one backward pass.

    Use as a context manager; operations executed inside record themselves.
    ``backward`` is single-shot: a second call raises TapeConsumedError.
    A tape must stay confined to one thread of control.
    """

    def __init__(self):
        self._records: list[_Record] = []
        self._consumed = False

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        _tape_stack().pop()

    def __len__(self) -> int:
        return len(self._records)

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/d(leaf) into every requires_grad leaf.

        Gradients add across fan-out; leaves that already hold a grad are
        accumulated into (the caller zeroes grads between steps).
        """
        if self._consumed:
            raise TapeConsumedError("backward() already ran on this tape")
        if loss.shape != ():
            raise ShapeError(f"loss must be a scalar, got shape {loss.shape}")
        self._consumed = True

        produced = {id(r.out) for r in self._records}
        grads: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=np.float64)}
        holders: dict[int, Tensor] = {id(loss): loss}

        for rec in reversed(self._records):
            g = grads.pop(id(rec.out), None)
            holders.pop(id(rec.out), None)
            if g is None:
                continue
            for inp, gin in zip(rec.inputs, rec.adjoint(g)):
                if gin is None or not inp.requires_grad:
                    continue
                key = id(inp)
                acc = grads.get(key)
                grads[key] = gin if acc is None else acc + gin
                holders[key] = inp

        for key, g in grads.items():
            leaf = holders[key]
            if id(leaf) in produced or not leaf.requires_grad:
                continue
            if leaf.grad is None:
                leaf.grad = np.array(g, dtype=np.float64, copy=True).reshape(leaf.shape)
            else:
                leaf.grad = leaf.grad + g.reshape(leaf.shape)


def record(out: Tensor, inputs: Sequence[Tensor], adjoint: Callable) -> Tensor:
    """Attach ``out`` to the active tape if any input participates in grads.

    ``adjoint(g)`` must return one gradient array (or None) per input, in
    order. Appending preserves topological order because inputs already
    exist when their consumer records.
    """
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._tape = tape
        tape._records.append(_Record(out, tuple(inputs), adjoint))
    return out


def build_tensor(shape: Sequence[int], values: Sequence[float], requires_grad: bool = False) -> Tensor:
    """Construct a tensor from a shape and a flat row-major value sequence."""
    shape = tuple(int(s) for s in shape)
    flat = np.asarray(values, dtype=np.float64).reshape(-1)
    n = 1
    for s in shape:
        n *= s
    if flat.size != n:
        raise ShapeError(f"shape {shape} needs {n} values, got {flat.size}")
    return Tensor(flat.reshape(shape), requires_grad=requires_grad)


def _as_scalar(b) -> Optional[float]:
    if isinstance(b, Tensor):
        return None
    return float(b)


def _binary(a: Tensor, b, fwd, adj_pair, adj_scalar):
    s = _as_scalar(b)
    if s is not None:
        out = Tensor(fwd(a.data, s))
        return record(out, (a,), lambda g: adj_scalar(g, s))
    if a.shape != b.shape:
        raise ShapeError(f"elementwise shapes differ: {a.shape} vs {b.shape}")
    out = Tensor(fwd(a.data, b.data))
    return record(out, (a, b), lambda g: adj_pair(g))


def add(a: Tensor, b) -> Tensor:
    """Elementwise a + b; b may be a same-shape tensor or a scalar."""
    return _binary(a, b, lambda x, y: x + y,
                   lambda g: (g, g), lambda g, s: (g,))


def sub(a: Tensor, b) -> Tensor:
    return _binary(a, b, lambda x, y: x - y,
                   lambda g: (g, -g), lambda g, s: (g,))


def mul(a: Tensor, b) -> Tensor:
    return _binary(a, b, lambda x, y: x * y,
                   lambda g: (g * b.data, g * a.data), lambda g, s: (g * s,))


def scalar_add(a: Tensor, s: float) -> Tensor:
    out = Tensor(a.data + float(s))
    return record(out, (a,), lambda g: (g,))


def scalar_mul(a: Tensor, s: float) -> Tensor:
    s = float(s)
    out = Tensor(a.data * s)
    return record(out, (a,), lambda g: (g * s,))


def neg(a: Tensor) -> Tensor:
    out = Tensor(-a.data)
    return record(out, (a,), lambda g: (-g,))


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp to [lo, hi]. The adjoint passes gradient only strictly inside
    the bounds (zero exactly at lo and hi), the subgradient convention that
    keeps projected-gradient iterates well-defined on the box boundary.
    """
    lo = float(lo)
    hi = float(hi)
    out = Tensor(np.clip(a.data, lo, hi))
    x = a.data

    def adjoint(g):
        return (g * ((x > lo) & (x < hi)),)

    return record(out, (a,), adjoint)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Rank-2 matrix product."""
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul expects rank-2 tensors, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"inner dimensions differ: {a.shape} vs {b.shape}")
    out = Tensor(a.data @ b.data)

    def adjoint(g):
        ga = g @ b.data.T if a.requires_grad else None
        gb = a.data.T @ g if b.requires_grad else None
        return (ga, gb)

    return record(out, (a, b), adjoint)


def _norm_axes(axes, ndim: int) -> tuple:
    if axes is None:
        return tuple(range(ndim))
    axes = tuple(int(ax) for ax in (axes if isinstance(axes, (tuple, list, set, frozenset)) else (axes,)))
    seen = set()
    for ax in axes:
        if ax < 0 or ax >= ndim:
            raise AxisError(f"axis {ax} out of range for rank {ndim}")
        if ax in seen:
            raise AxisError(f"axis {ax} repeated")
        seen.add(ax)
    return tuple(sorted(axes))


def reduce_sum(x: Tensor, axes=None) -> Tensor:
    axes = _norm_axes(axes, x.data.ndim)
    out = Tensor(np.sum(x.data, axis=axes))
    shape = x.shape

    def adjoint(g):
        ge = np.expand_dims(g, axes) if axes else g
        return (np.broadcast_to(ge, shape).copy(),)

    return record(out, (x,), adjoint)


def reduce_mean(x: Tensor, axes=None) -> Tensor:
    axes = _norm_axes(axes, x.data.ndim)
    count = 1
    for ax in axes:
        count *= x.shape[ax]
    out = Tensor(np.mean(x.data, axis=axes))
    shape = x.shape

    def adjoint(g):
        ge = np.expand_dims(g, axes) if axes else g
        return (np.broadcast_to(ge / count, shape).copy(),)

    return record(out, (x,), adjoint)


def reduce_max(x: Tensor, axes=None) -> Tensor:
    """Maximum over ``axes``. The gradient routes to the first maximal
    element of each reduced slice in row-major scan order (deterministic
    tie-break).
    """
    axes = _norm_axes(axes, x.data.ndim)
    ndim = x.data.ndim
    kept = tuple(ax for ax in range(ndim) if ax not in axes)
    perm = kept + axes
    moved = np.transpose(x.data, perm)
    kept_shape = moved.shape[: len(kept)]
    flat = moved.reshape(int(np.prod(kept_shape)) if kept_shape else 1, -1)
    arg = np.argmax(flat, axis=1)
    out = Tensor(flat[np.arange(flat.shape[0]), arg].reshape(kept_shape))
    red_shape = moved.shape[len(kept):]

    def adjoint(g):
        gz = np.zeros(flat.shape, dtype=np.float64)
        gz[np.arange(flat.shape[0]), arg] = g.reshape(-1)
        gz = gz.reshape(kept_shape + red_shape)
        inv = np.argsort(perm)
        return (np.transpose(gz, inv),)

    return record(out, (x,), adjoint)


def finite_difference_gradient(f: Callable[[np.ndarray], float], x, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient oracle: (f(x+h*e_i) - f(x-h*e_i)) / 2h.

    ``f`` maps an ndarray to a scalar; ``x`` may be a Tensor or ndarray.
    Independent of the tape machinery by construction.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    base = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
    flat = base.reshape(-1)
    out = np.empty_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        work = base.copy()
        wf = work.reshape(-1)
        wf[i] = orig + h
        fp = float(f(work))
        wf[i] = orig - h
        fm = float(f(work))
        out[i] = (fp - fm) / (2.0 * h)
    return out.reshape(base.shape)
