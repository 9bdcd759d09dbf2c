"""Dense-tensor arithmetic with reverse-mode automatic differentiation.

Values are float64 numpy arrays up to rank 3. Operations record onto the
innermost active :class:`Tape` whenever an operand requires gradients;
``tape.backward(loss)`` then accumulates d(loss)/d(leaf) into each leaf's
``grad`` buffer. Without an active tape, operations are plain numpy
evaluation (used for inference and sampling).
"""

from __future__ import annotations

import threading

import numpy as np
from scipy.special import expit


class ShapeError(ValueError):
    """Operand shapes do not conform for a primitive operation."""


class Tensor:
    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        # grad buffers live on leaves only; op results propagate through the
        # tape's per-backward accumulator instead.
        self.grad = np.zeros_like(self.data) if requires_grad else None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad[...] = 0.0

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # expression sugar; the module-level functions do the real work
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __matmul__(self, other):
        return matmul(self, _as_tensor(other))

    def __neg__(self):
        return scale(self, -1.0)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class _Entry:
    __slots__ = ("out", "inputs", "bwd", "fwd")

    def __init__(self, out, inputs, bwd, fwd):
        self.out = out
        self.inputs = inputs
        self.bwd = bwd
        self.fwd = fwd


_tls = threading.local()


def _active_tape():
    stack = getattr(_tls, "stack", None)
    return stack[-1] if stack else None


class Tape:
    """Ordered record of primitive ops; one single-threaded unit of work."""

    def __init__(self):
        self._entries: list[_Entry] = []

    def __enter__(self) -> "Tape":
        stack = getattr(_tls, "stack", None)
        if stack is None:
            stack = _tls.stack = []
        stack.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _tls.stack.pop()
        return False

    def __len__(self) -> int:
        return len(self._entries)

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/d(leaf) into every requires_grad leaf.

        Repeated calls without resetting grads accumulate. Intermediate
        gradients are kept in a per-call map, so calling twice doubles leaf
        grads rather than compounding.
        """
        if loss.data.size != 1:
            raise ValueError(
                f"backward: loss must be scalar, got shape {loss.shape}"
            )
        if not self._entries:
            raise ValueError("backward: tape is empty")
        acc: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        produced = {id(e.out) for e in self._entries}
        for entry in reversed(self._entries):
            out_grad = acc.get(id(entry.out))
            if out_grad is None:
                continue
            for t, g in zip(entry.inputs, entry.bwd(out_grad)):
                if g is None or not t.requires_grad:
                    continue
                key = id(t)
                if key in acc:
                    acc[key] = acc[key] + g
                else:
                    acc[key] = g
                if t.grad is not None and key not in produced:
                    t.grad += g

    def replay(self) -> None:
        """Recompute every recorded op in order, overwriting output values."""
        for entry in self._entries:
            entry.out.data = entry.fwd()


def _record(out: Tensor, inputs: tuple[Tensor, ...], bwd, fwd) -> Tensor:
    tape = _active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out.grad = None  # not a leaf
        tape._entries.append(_Entry(out, inputs, bwd, fwd))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum g over the axes numpy broadcast when producing it from `shape`."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _check_broadcast(op: str, a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(
            f"{op}: shapes {a.shape} and {b.shape} are not broadcast-compatible"
        ) from None


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast("add", a, b)
    out = Tensor(a.data + b.data)

    def bwd(g):
        return (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape))

    return _record(out, (a, b), bwd, lambda: a.data + b.data)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast("sub", a, b)
    out = Tensor(a.data - b.data)

    def bwd(g):
        return (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape))

    return _record(out, (a, b), bwd, lambda: a.data - b.data)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast("mul", a, b)
    out = Tensor(a.data * b.data)

    def bwd(g):
        return (
            _unbroadcast(g * b.data, a.shape),
            _unbroadcast(g * a.data, b.shape),
        )

    return _record(out, (a, b), bwd, lambda: a.data * b.data)


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)
    out = Tensor(a.data * s)
    return _record(out, (a,), lambda g: (g * s,), lambda: a.data * s)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(
            f"matmul: operands must be rank >= 2, got {a.shape} and {b.shape}"
        )
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(
            f"matmul: inner dimensions differ, {a.shape} vs {b.shape}"
        )

    def fwd():
        if b.data.ndim == 2 and a.data.ndim > 2:
            # batched rows against a shared matrix: one flat GEMM
            flat = a.data.reshape(-1, a.shape[-1]) @ b.data
            return flat.reshape(a.shape[:-1] + (b.shape[-1],))
        return np.matmul(a.data, b.data)

    out = Tensor(fwd())

    def bwd(g):
        if b.data.ndim == 2 and a.data.ndim > 2:
            gf = g.reshape(-1, g.shape[-1])
            ga = (gf @ b.data.T).reshape(a.shape)
            gb = a.data.reshape(-1, a.shape[-1]).T @ gf
            return (ga, gb)
        ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return (ga, gb)

    return _record(out, (a, b), bwd, fwd)


def concat(tensors: list[Tensor], axis: int) -> Tensor:
    if not tensors:
        raise ShapeError("concat: need at least one tensor")
    ndim = tensors[0].ndim
    ref = list(tensors[0].shape)
    for t in tensors[1:]:
        other = list(t.shape)
        if t.ndim != ndim or ref[:axis] + ref[axis + 1 :] != other[:axis] + other[axis + 1 :]:
            raise ShapeError(
                f"concat: shapes {tensors[0].shape} and {t.shape} differ off axis {axis}"
            )
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.split(g, splits, axis=axis))

    return _record(
        out,
        tuple(tensors),
        bwd,
        lambda: np.concatenate([t.data for t in tensors], axis=axis),
    )


def tsum(a: Tensor, axis: int | tuple[int, ...] | None = None,
         keepdims: bool = False) -> Tensor:
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims))

    def bwd(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _record(out, (a,), bwd, lambda: a.data.sum(axis=axis, keepdims=keepdims))


def transpose(a: Tensor, axes: tuple[int, ...] | None = None) -> Tensor:
    out = Tensor(np.transpose(a.data, axes))
    inv = None if axes is None else tuple(np.argsort(axes))

    def bwd(g):
        return (np.transpose(g, inv),)

    return _record(out, (a,), bwd, lambda: np.transpose(a.data, axes))


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    if np.prod(shape) != a.data.size:
        raise ShapeError(f"reshape: cannot view {a.shape} as {shape}")
    out = Tensor(a.data.reshape(shape))

    def bwd(g):
        return (g.reshape(a.shape),)

    return _record(out, (a,), bwd, lambda: a.data.reshape(shape))


def expand(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    try:
        out_data = np.broadcast_to(a.data, shape)
    except ValueError:
        raise ShapeError(f"expand: cannot broadcast {a.shape} to {shape}") from None
    out = Tensor(out_data.copy())

    def bwd(g):
        return (_unbroadcast(g, a.shape),)

    return _record(out, (a,), bwd, lambda: np.broadcast_to(a.data, shape).copy())


def elu(a: Tensor) -> Tensor:
    def fwd():
        x = a.data
        return np.where(x > 0, x, np.expm1(np.minimum(x, 0.0)))

    out = Tensor(fwd())

    def bwd(g):
        # for x <= 0: d/dx elu = e^x = elu(x) + 1
        return (g * np.where(a.data > 0, 1.0, out.data + 1.0),)

    return _record(out, (a,), bwd, fwd)


def sigmoid(a: Tensor) -> Tensor:
    out = Tensor(expit(a.data))

    def bwd(g):
        return (g * out.data * (1.0 - out.data),)

    return _record(out, (a,), bwd, lambda: expit(a.data))


def softplus(a: Tensor) -> Tensor:
    out = Tensor(np.logaddexp(0.0, a.data))

    def bwd(g):
        return (g * expit(a.data),)

    return _record(out, (a,), bwd, lambda: np.logaddexp(0.0, a.data))


def frob2(a: Tensor) -> Tensor:
    """Squared Frobenius norm, reduced to a scalar."""
    out = Tensor((a.data * a.data).sum())

    def bwd(g):
        return (2.0 * g * a.data,)

    return _record(out, (a,), bwd, lambda: (a.data * a.data).sum())


class AdamState:
    """Adam moment accumulators for a fixed parameter list."""

    def __init__(self, lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m: list[np.ndarray] | None = None
        self.v: list[np.ndarray] | None = None


def adam_step(params: list[Tensor], state: AdamState) -> None:
    """One bias-corrected Adam update, in place. Grads are left untouched."""
    if state.m is None:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    if len(params) != len(state.m):
        raise ValueError(
            f"adam_step: state tracks {len(state.m)} params, got {len(params)}"
        )
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for i, p in enumerate(params):
        if p.grad is None:
            raise ValueError(f"adam_step: parameter {i} has no gradient")
        g = p.grad
        m = state.m[i]
        v = state.v[i]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def zero_grads(params: list[Tensor]) -> None:
    for p in params:
        p.zero_grad()
