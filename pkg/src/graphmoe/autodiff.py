"""Reverse-mode automatic differentiation over dense float64 arrays.

Every op records a node on the active :class:`Tape`; :func:`backward` walks the
tape once in reverse and returns a gradient table keyed by tensor id. Without
an active tape ops run in plain numpy and produce constants, which is how
inference avoids bookkeeping.

>>> x = Tensor([3.0], requires_grad=True)
>>> with Tape():
...     loss = (x * x).sum()
>>> _ = backward(loss)
>>> x.grad
array([6.])
"""

from __future__ import annotations

import itertools
import math
import threading
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "ShapeError",
    "NumericError",
    "TapeError",
    "apply",
    "backward",
    "grad_check",
    "OPS",
]

_ids = itertools.count()
_local = threading.local()


class ShapeError(ValueError):
    """Operand shapes are invalid for the requested op."""


class NumericError(FloatingPointError):
    """An op produced NaN or Inf."""


class TapeError(RuntimeError):
    """A tensor was used outside the tape that produced it."""


def _active_tape() -> "Tape | None":
    stack = getattr(_local, "stack", None)
    return stack[-1] if stack else None


class Tape:
    """Ordered record of ops, used as a context manager.

    Tapes are thread-local: ops executed on one thread never land on a tape
    opened on another.
    """

    def __init__(self) -> None:
        self.nodes: list[tuple[str, tuple["Tensor", ...], "Tensor", Callable]] = []
        self._ids: set[int] = set()

    def __enter__(self) -> "Tape":
        if not hasattr(_local, "stack"):
            _local.stack = []
        _local.stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _local.stack.pop()

    def __len__(self) -> int:
        return len(self.nodes)

    def owns(self, t: "Tensor") -> bool:
        return t.id in self._ids

    def _record(self, kind, inputs, out, backward_fn) -> None:
        self.nodes.append((kind, inputs, out, backward_fn))
        self._ids.add(out.id)


class Tensor:
    """Dense float64 array with an optional gradient.

    Leaves (parameters, inputs) carry ``requires_grad``; op outputs created
    under a tape reference that tape and are only valid on it.
    """

    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self.id = next(_ids)
        self._tape: Tape | None = None

    # -- basic properties -------------------------------------------------
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
    def is_leaf(self) -> bool:
        return self._tape is None

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    # -- operator sugar ---------------------------------------------------
    def __add__(self, other):
        return apply("add", [self, _wrap(other)])

    __radd__ = __add__

    def __sub__(self, other):
        return apply("sub", [self, _wrap(other)])

    def __rsub__(self, other):
        return apply("sub", [_wrap(other), self])

    def __mul__(self, other):
        if np.isscalar(other):
            return apply("scale", [self], {"factor": float(other)})
        return apply("mul", [self, _wrap(other)])

    __rmul__ = __mul__

    def __truediv__(self, other):
        if np.isscalar(other):
            return apply("scale", [self], {"factor": 1.0 / float(other)})
        return apply("div", [self, _wrap(other)])

    def __neg__(self):
        return apply("scale", [self], {"factor": -1.0})

    def __matmul__(self, other):
        return apply("matmul", [self, _wrap(other)])

    def __getitem__(self, index):
        return apply("slice", [self], {"index": index})

    def sum(self, axis=None, keepdims=False):
        return apply("sum", [self], {"axis": axis, "keepdims": keepdims})

    def mean(self, axis=None, keepdims=False):
        return apply("mean", [self], {"axis": axis, "keepdims": keepdims})

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return apply("reshape", [self], {"shape": shape})

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return apply("transpose", [self], {"axes": axes or None})

    def swapaxes(self, a: int, b: int):
        axes = list(range(self.ndim))
        axes[a], axes[b] = axes[b], axes[a]
        return self.transpose(axes)

    def relu(self):
        return apply("relu", [self])

    def tanh(self):
        return apply("tanh", [self])

    def sigmoid(self):
        return apply("sigmoid", [self])

    def exp(self):
        return apply("exp", [self])

    def log(self):
        return apply("log", [self])

    def softmax(self):
        return apply("softmax", [self])

    def take(self, indices, axis: int = -1):
        return apply("take", [self], {"indices": np.asarray(indices, dtype=np.intp), "axis": axis})


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _binary(kind: str, ufunc, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    try:
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            return ufunc(a, b)  # non-finite results are reported by apply()
    except ValueError:
        raise ShapeError(f"{kind}: cannot broadcast shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------------------
# op definitions: forward(arrays, **attrs) -> (out, backward(g) -> grads)
# ---------------------------------------------------------------------------

def _add(a, b):
    return _binary("add", np.add, a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape))


def _sub(a, b):
    return _binary("sub", np.subtract, a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape))


def _mul(a, b):
    return _binary("mul", np.multiply, a, b), lambda g: (_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape))


def _div(a, b):
    out = _binary("div", np.divide, a, b)
    return out, lambda g: (_unbroadcast(g / b, a.shape), _unbroadcast(-g * out / b, b.shape))


def _scale(a, factor):
    return a * factor, lambda g: (g * factor,)


def _matmul(a, b):
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    if b.ndim == 2 and a.ndim > 2:
        # fold leading axes into one GEMM instead of many tiny ones
        a2 = a.reshape(-1, a.shape[-1])
        out = (a2 @ b).reshape(*a.shape[:-1], b.shape[-1])

        def bwd2(g):
            g2 = g.reshape(-1, g.shape[-1])
            return (g2 @ b.T).reshape(a.shape), a2.T @ g2

        return out, bwd2
    try:
        out = np.matmul(a, b)
    except ValueError:
        raise ShapeError(f"matmul: incompatible batch shapes {a.shape} @ {b.shape}") from None

    def bwd(g):
        ga = np.matmul(g, np.swapaxes(b, -1, -2))
        gb = np.matmul(np.swapaxes(a, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return out, bwd


def _concat(*arrays, axis=0):
    ref = arrays[0]
    ax = axis % ref.ndim
    for x in arrays[1:]:
        if x.ndim != ref.ndim or any(
            x.shape[i] != ref.shape[i] for i in range(ref.ndim) if i != ax
        ):
            raise ShapeError(f"concat: mismatched shapes {[y.shape for y in arrays]} on axis {axis}")
    out = np.concatenate(arrays, axis=ax)
    bounds = np.cumsum([x.shape[ax] for x in arrays])[:-1]
    return out, lambda g: tuple(np.split(g, bounds, axis=ax))


def _stack(*arrays, axis=0):
    if len({x.shape for x in arrays}) != 1:
        raise ShapeError(f"stack: mismatched shapes {[x.shape for x in arrays]}")
    out = np.stack(arrays, axis=axis)
    n = len(arrays)
    return out, lambda g: tuple(np.take(g, i, axis=axis) for i in range(n))


class _SliceGrad:
    """Gradient that is nonzero only on ``index``; accumulated in place by backward."""

    __slots__ = ("index", "value")

    def __init__(self, index, value):
        self.index = index
        self.value = value


def _slice(a, index):
    out = a[index]
    return np.array(out, dtype=np.float64), lambda g: (_SliceGrad(index, g),)


def _take(a, indices, axis=-1):
    if indices.size and (indices.max() >= a.shape[axis] or indices.min() < -a.shape[axis]):
        raise ShapeError(f"take: index out of range for axis of length {a.shape[axis]}")
    out = np.take(a, indices, axis=axis)

    def bwd(g):
        full = np.zeros_like(a)
        np.add.at(np.moveaxis(full, axis, -1), (..., indices), np.moveaxis(g, axis, -1))
        return (full,)

    return out, bwd


def _reshape(a, shape):
    try:
        out = a.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {a.shape} to {shape}") from None
    return out, lambda g: (g.reshape(a.shape),)


def _transpose(a, axes=None):
    # materialise so downstream GEMMs see contiguous memory
    out = np.ascontiguousarray(np.transpose(a, axes))
    inv = None if axes is None else np.argsort(axes)
    return out, lambda g: (np.ascontiguousarray(np.transpose(g, inv)),)


def _sum(a, axis=None, keepdims=False):
    out = np.sum(a, axis=axis, keepdims=keepdims)

    def bwd(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return np.asarray(out, dtype=np.float64), bwd


def _mean(a, axis=None, keepdims=False):
    out = np.mean(a, axis=axis, keepdims=keepdims)
    if axis is None:
        n = a.size
    else:
        axes = (axis,) if np.isscalar(axis) else axis
        n = int(np.prod([a.shape[i] for i in axes]))

    def bwd(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / n, a.shape).copy(),)

    return np.asarray(out, dtype=np.float64), bwd


def _relu(a):
    mask = a > 0
    return np.maximum(a, 0.0), lambda g: (g * mask,)


def _tanh(a):
    out = np.tanh(a)
    return out, lambda g: (g * (1.0 - out * out),)


def _sigmoid(a):
    # tanh form never overflows and gives exactly 0.5 at 0
    out = 0.5 + 0.5 * np.tanh(0.5 * a)
    return out, lambda g: (g * out * (1.0 - out),)


def _exp(a):
    with np.errstate(over="ignore"):
        out = np.exp(a)
    return out, lambda g: (g * out,)


def _log(a):
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a)
    return out, lambda g: (g / a,)


def _softmax(a):
    shifted = a - a.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def bwd(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return out, bwd


def _layer_norm(a, eps=1e-5):
    mu = a.mean(axis=-1, keepdims=True)
    xc = a - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    out = xc * inv

    def bwd(g):
        gm = g.mean(axis=-1, keepdims=True)
        gxm = (g * out).mean(axis=-1, keepdims=True)
        return (inv * (g - gm - out * gxm),)

    return out, bwd


def _affine(x, W, b):
    if x.ndim < 1 or W.ndim != 2 or b.shape != (W.shape[1],) or x.shape[-1] != W.shape[0]:
        raise ShapeError(f"affine: incompatible shapes {x.shape} @ {W.shape} + {b.shape}")
    x2 = x.reshape(-1, x.shape[-1])
    out = x2 @ W
    out += b
    out = out.reshape(*x.shape[:-1], W.shape[1])

    def bwd(g):
        g2 = g.reshape(-1, g.shape[-1])
        return (g2 @ W.T).reshape(x.shape), x2.T @ g2, g2.sum(axis=0)

    return out, bwd


def _sig(a):
    return 0.5 + 0.5 * np.tanh(0.5 * a)


def _gru_cell(gx, h, W_h, b_h, t=None):
    """h' = (1 - z) n + z h with gate order (r, z, n).

    ``gx`` is the input projection (N, 3d), or a (T, N, 3d) stack of them
    with ``t`` picking the step.
    """
    d = h.shape[-1]
    gxt = gx if t is None else gx[t]
    if gxt.shape != (h.shape[0], 3 * d) or W_h.shape != (d, 3 * d):
        raise ShapeError(f"gru_cell: shapes gx {gx.shape}, h {h.shape}, W_h {W_h.shape}")
    gh = h @ W_h
    gh += b_h
    rz = _sig(gxt[:, : 2 * d] + gh[:, : 2 * d])
    r, z = rz[:, :d], rz[:, d:]
    n = np.tanh(gxt[:, 2 * d :] + r * gh[:, 2 * d :])
    out = n + z * (h - n)

    def bwd(g):
        da_n = g * (1.0 - z) * (1.0 - n * n)
        dgh = np.empty_like(gh)
        dgh[:, :d] = da_n * gh[:, 2 * d :] * r * (1.0 - r)
        dgh[:, d : 2 * d] = g * (h - n) * z * (1.0 - z)
        dgh[:, 2 * d :] = da_n * r
        dgx = dgh.copy()
        dgx[:, 2 * d :] = da_n
        dh = g * z + dgh @ W_h.T
        if t is not None:
            dgx = _SliceGrad(t, dgx)
        return dgx, dh, h.T @ dgh, dgh.sum(axis=0)

    return out, bwd


def _lstm_cell(gx, h, c, W_h, b_h, t=None):
    """One LSTM step with gate order (i, f, g, o); returns [h', c'] on the last axis."""
    d = h.shape[-1]
    gxt = gx if t is None else gx[t]
    if gxt.shape != (h.shape[0], 4 * d) or W_h.shape != (d, 4 * d) or c.shape != h.shape:
        raise ShapeError(f"lstm_cell: shapes gx {gx.shape}, h {h.shape}, c {c.shape}, W_h {W_h.shape}")
    a = h @ W_h
    a += b_h
    a += gxt
    i_f = _sig(a[:, : 2 * d])
    i, f = i_f[:, :d], i_f[:, d:]
    gg = np.tanh(a[:, 2 * d : 3 * d])
    o = _sig(a[:, 3 * d :])
    c_new = f * c + i * gg
    tc = np.tanh(c_new)
    out = np.concatenate([o * tc, c_new], axis=-1)

    def bwd(g):
        gh, gc = g[:, :d], g[:, d:]
        dc = gc + gh * o * (1.0 - tc * tc)
        da = np.empty_like(a)
        da[:, :d] = dc * gg * i * (1.0 - i)
        da[:, d : 2 * d] = dc * c * f * (1.0 - f)
        da[:, 2 * d : 3 * d] = dc * i * (1.0 - gg * gg)
        da[:, 3 * d :] = gh * tc * o * (1.0 - o)
        dgx = _SliceGrad(t, da) if t is not None else da
        return dgx, da @ W_h.T, dc * f, h.T @ da, da.sum(axis=0)

    return out, bwd


OPS: dict[str, Callable] = {
    "add": _add,
    "sub": _sub,
    "mul": _mul,
    "div": _div,
    "scale": _scale,
    "matmul": _matmul,
    "concat": _concat,
    "stack": _stack,
    "slice": _slice,
    "take": _take,
    "reshape": _reshape,
    "transpose": _transpose,
    "sum": _sum,
    "mean": _mean,
    "relu": _relu,
    "tanh": _tanh,
    "sigmoid": _sigmoid,
    "exp": _exp,
    "log": _log,
    "softmax": _softmax,
    "layer_norm": _layer_norm,
    "affine": _affine,
    "gru_cell": _gru_cell,
    "lstm_cell": _lstm_cell,
}

# ops whose output is finite whenever their inputs are; the overflow check is
# skipped for these (non-finite inputs are caught by the op that produced them)
_BOUNDED = frozenset(
    {"slice", "take", "reshape", "transpose", "concat", "stack", "relu", "tanh",
     "sigmoid", "softmax", "layer_norm", "gru_cell", "lstm_cell"}
)


def _all_finite(a: np.ndarray) -> bool:
    # one reduction on the fast path; the sum can overflow on finite data, so confirm elementwise
    with np.errstate(over="ignore", invalid="ignore"):
        if math.isfinite(float(np.add.reduce(a, axis=None))):
            return True
    return bool(np.isfinite(a).all())


def apply(kind: str, inputs: Sequence[Tensor], attrs: dict | None = None) -> Tensor:
    """Run op ``kind`` on ``inputs`` and record it on the active tape."""
    try:
        fn = OPS[kind]
    except KeyError:
        raise ValueError(f"unknown op kind {kind!r}") from None
    inputs = tuple(_wrap(x) for x in inputs)
    tape = _active_tape()
    if tape is not None:
        for x in inputs:
            if x._tape is not None and x._tape is not tape:
                raise TapeError(f"{kind}: input tensor {x.id} belongs to a different tape")
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        out_data, bwd = fn(*(x.data for x in inputs), **(attrs or {}))
    if kind not in _BOUNDED and out_data.size and not _all_finite(out_data):
        raise NumericError(f"{kind}: non-finite output (input shapes {[x.shape for x in inputs]})")
    out = Tensor(out_data)
    if tape is not None and any(x.requires_grad for x in inputs):
        out.requires_grad = True
        out._tape = tape
        tape._record(kind, inputs, out, bwd)
    return out


# functional helpers for multi-input ops
def concat(tensors: Iterable[Tensor], axis: int = 0) -> Tensor:
    return apply("concat", list(tensors), {"axis": axis})


def stack(tensors: Iterable[Tensor], axis: int = 0) -> Tensor:
    return apply("stack", list(tensors), {"axis": axis})


def layer_norm(x: Tensor, eps: float = 1e-5) -> Tensor:
    return apply("layer_norm", [x], {"eps": eps})


def affine(x: Tensor, W: Tensor, b: Tensor) -> Tensor:
    """x @ W + b as one node."""
    return apply("affine", [x, W, b])


def backward(loss: Tensor) -> dict[int, np.ndarray]:
    """Backpropagate from a scalar ``loss``.

    Returns ``{tensor_id: grad}`` for every tensor reached; leaf tensors with
    ``requires_grad`` also get their ``.grad`` overwritten.
    """
    if loss.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    tape = loss._tape
    if tape is None or not tape.owns(loss):
        raise TapeError("backward: loss was not produced on a tape")
    grads: dict[int, np.ndarray] = {loss.id: np.ones_like(loss.data)}
    owned: set[int] = set()  # grads allocated here, safe to update in place
    leaves: dict[int, Tensor] = {}
    for kind, inputs, out, bwd in reversed(tape.nodes):
        g = grads.pop(out.id, None)
        if g is None:
            continue
        in_grads = bwd(g)
        for x, gx in zip(inputs, in_grads):
            if not x.requires_grad:
                continue
            if x.is_leaf:
                leaves[x.id] = x
            _accumulate(grads, owned, x, gx)
    if loss.is_leaf:
        leaves[loss.id] = loss
    for tid, leaf in leaves.items():
        # leaves may share a buffer (e.g. both operands of an add); give each its own
        g = grads[tid]
        leaf.grad = g if tid in owned else np.array(g, dtype=np.float64)
    return grads


def _accumulate(grads: dict, owned: set, x: Tensor, gx) -> None:
    buf = grads.get(x.id)
    if isinstance(gx, _SliceGrad):
        if buf is None or x.id not in owned:
            fresh = np.zeros(x.shape)
            if buf is not None:
                fresh += buf
            grads[x.id] = buf = fresh
            owned.add(x.id)
        buf[gx.index] += gx.value
    elif buf is None:
        grads[x.id] = gx
    elif x.id in owned:
        buf += gx
    else:
        grads[x.id] = buf + gx
        owned.add(x.id)


def grad_check(
    f: Callable[..., Tensor],
    x: Tensor | Sequence[Tensor],
    eps: float = 1e-5,
) -> float:
    """Max relative error between autodiff and central differences.

    ``f`` maps the tensor(s) ``x`` to a scalar tensor. Relative error per
    coordinate is ``|analytic - numeric| / max(1, |analytic|)``.
    """
    if not 1e-7 <= eps <= 1e-4:
        raise ValueError(f"eps must lie in [1e-7, 1e-4], got {eps}")
    xs = [x] if isinstance(x, Tensor) else list(x)
    saved = [t.requires_grad for t in xs]
    for t in xs:
        t.requires_grad = True
        t.grad = None
    try:
        with Tape():
            out = f(*xs) if not isinstance(x, Tensor) else f(x)
        backward(out)
        analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in xs]

        def value() -> float:
            r = f(*xs) if not isinstance(x, Tensor) else f(x)
            return r.item()

        worst = 0.0
        for t, ga in zip(xs, analytic):
            flat = t.data.reshape(-1)
            gflat = ga.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + eps
                fp = value()
                flat[i] = orig - eps
                fm = value()
                flat[i] = orig
                num = (fp - fm) / (2.0 * eps)
                if not np.isfinite(num):
                    raise NumericError(f"grad_check: non-finite finite difference at coordinate {i}")
                err = abs(gflat[i] - num) / max(1.0, abs(gflat[i]))
                worst = max(worst, err)
        return worst
    finally:
        for t, s in zip(xs, saved):
            t.requires_grad = s
