"""Reverse-mode autodiff over dense float32 arrays.

A Tape records one forward pass; it is rebuilt from scratch on every pass,
so there is no retained graph and no implicit state between iterations.
Each op validates shapes, computes its result with numpy, checks the
output for NaN/Inf (fail fast), and registers a backward closure that
pulls the output gradient back to each tracked input.

Values are float32 throughout.  Reductions accumulate in float64 before
casting back, which keeps finite-difference checks tight without changing
the storage format.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np

from .errors import DomainError, NumericError, ShapeError

Array = np.ndarray

_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715


def _as_f32(data) -> Array:
    arr = np.asarray(data, dtype=np.float32)
    if not arr.flags["C_CONTIGUOUS"]:
        arr = np.ascontiguousarray(arr)
    return arr


def _check_finite(out: Array, op: str) -> None:
    if not np.all(np.isfinite(out)):
        raise NumericError(f"{op} produced non-finite values")


class Tape:
    """Ordered op record for a single forward pass.

    Backward replays the record in reverse.  Running backward twice on the
    same tape overwrites (never accumulates) every .grad, so the result is
    bitwise repeatable.
    """

    def __init__(self):
        self._tensors: list["Tensor"] = []
        self._ops: list[tuple[int, tuple[tuple[int, Callable[[Array], Array]], ...]]] = []

    def _register(self, t: "Tensor") -> None:
        t.tape = self
        t.node_id = len(self._tensors)
        self._tensors.append(t)

    def _record(self, out: "Tensor", pulls: Sequence[tuple["Tensor", Callable[[Array], Array]]]) -> None:
        self._ops.append((out.node_id, tuple((t.node_id, fn) for t, fn in pulls)))

    @property
    def num_ops(self) -> int:
        return len(self._ops)

    def backward(self, root: "Tensor") -> None:
        if root.tape is not self:
            raise ValueError("backward root does not belong to this tape")
        if root.data.size != 1:
            raise ShapeError("backward root must be a scalar")
        grads: list[Array | None] = [None] * len(self._tensors)
        grads[root.node_id] = np.ones_like(root.data)
        for out_id, pulls in reversed(self._ops):
            g = grads[out_id]
            if g is None:
                continue
            for in_id, fn in pulls:
                contrib = fn(g)
                if grads[in_id] is None:
                    grads[in_id] = contrib
                else:
                    grads[in_id] = grads[in_id] + contrib
        for t, g in zip(self._tensors, grads):
            if g is None:
                t.grad = np.zeros_like(t.data)
            else:
                t.grad = np.ascontiguousarray(g, dtype=np.float32).reshape(t.data.shape)


def _common_tape(tensors: Sequence["Tensor"]) -> Tape | None:
    tape = None
    for t in tensors:
        if t.tape is None:
            continue
        if tape is None:
            tape = t.tape
        elif tape is not t.tape:
            raise ValueError("operands belong to different tapes")
    return tape


def _emit(out_data: Array, inputs: Sequence["Tensor"],
          pulls: Sequence[tuple["Tensor", Callable[[Array], Array]]], op: str) -> "Tensor":
    _check_finite(out_data, op)
    tape = _common_tape(inputs)
    out = Tensor(out_data, tape)
    if tape is not None:
        tape._record(out, [(t, fn) for t, fn in pulls if t.tape is not None])
    return out


class Tensor:
    """Dense float32 array, optionally tracked on a tape.

    Tensors built with tape=None are constants: they flow through ops but
    receive no gradient.  After Tape.backward, every tracked tensor has a
    .grad of its own shape (zeros where the root does not depend on it).
    """

    __slots__ = ("data", "grad", "tape", "node_id")

    def __init__(self, data, tape: Tape | None = None):
        self.data = _as_f32(data)
        self.grad: Array | None = None
        self.tape: Tape | None = None
        self.node_id: int | None = None
        if tape is not None:
            tape._register(self)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError("item() expects a single-element tensor")
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        tracked = "tracked" if self.tape is not None else "const"
        return f"Tensor(shape={self.data.shape}, {tracked})"

    # -- elementwise binary (strict equal shapes, no implicit broadcasting) --

    def _binary(self, other: "Tensor", op: str) -> None:
        if not isinstance(other, Tensor):
            raise TypeError(f"{op} expects a Tensor operand")
        if self.data.shape != other.data.shape:
            raise ShapeError(f"{op}: shape mismatch {self.data.shape} vs {other.data.shape}")

    def __add__(self, other: "Tensor") -> "Tensor":
        self._binary(other, "add")
        out = self.data + other.data
        return _emit(out, (self, other),
                     [(self, lambda g: g), (other, lambda g: g)], "add")

    def __sub__(self, other: "Tensor") -> "Tensor":
        self._binary(other, "sub")
        out = self.data - other.data
        return _emit(out, (self, other),
                     [(self, lambda g: g), (other, lambda g: -g)], "sub")

    def __mul__(self, other: "Tensor") -> "Tensor":
        self._binary(other, "mul")
        a, b = self.data, other.data
        out = a * b
        return _emit(out, (self, other),
                     [(self, lambda g: g * b), (other, lambda g: g * a)], "mul")

    def __truediv__(self, other: "Tensor") -> "Tensor":
        self._binary(other, "div")
        a, b = self.data, other.data
        with np.errstate(divide="ignore", invalid="ignore"):
            out = a / b
        return _emit(out, (self, other),
                     [(self, lambda g: g / b), (other, lambda g: -g * a / (b * b))], "div")

    def __neg__(self) -> "Tensor":
        return self.scale(-1.0)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return self.matmul(other)

    # -- structural ops --

    def matmul(self, other: "Tensor") -> "Tensor":
        if self.ndim != 2 or other.ndim != 2:
            raise ShapeError("matmul expects 2-d operands")
        if self.shape[1] != other.shape[0]:
            raise ShapeError(f"matmul: inner dims differ {self.shape} vs {other.shape}")
        a, b = self.data, other.data
        out = a @ b
        return _emit(out, (self, other),
                     [(self, lambda g: g @ b.T), (other, lambda g: a.T @ g)], "matmul")

    def transpose(self) -> "Tensor":
        if self.ndim != 2:
            raise ShapeError("transpose expects a 2-d tensor")
        out = np.ascontiguousarray(self.data.T)
        return _emit(out, (self,), [(self, lambda g: np.ascontiguousarray(g.T))], "transpose")

    def reshape(self, shape: tuple[int, ...]) -> "Tensor":
        if int(np.prod(shape)) != self.data.size:
            raise ShapeError(f"reshape to {shape} incompatible with {self.shape}")
        src_shape = self.data.shape
        out = self.data.reshape(shape)
        return _emit(out, (self,), [(self, lambda g: g.reshape(src_shape))], "reshape")

    def narrow(self, axis: int, start: int, length: int) -> "Tensor":
        if axis < 0 or axis >= self.ndim:
            raise ShapeError(f"narrow: axis {axis} out of range for {self.shape}")
        if start < 0 or length < 1 or start + length > self.shape[axis]:
            raise ShapeError(f"narrow: window [{start}:{start + length}] outside axis of size {self.shape[axis]}")
        idx = tuple(slice(None) if d != axis else slice(start, start + length)
                    for d in range(self.ndim))
        out = self.data[idx].copy()
        src_shape = self.data.shape

        def pull(g: Array) -> Array:
            full = np.zeros(src_shape, dtype=np.float32)
            full[idx] = g
            return full

        return _emit(out, (self,), [(self, pull)], "narrow")

    def scale(self, s: float) -> "Tensor":
        c = np.float32(s)
        out = self.data * c
        return _emit(out, (self,), [(self, lambda g: g * c)], "scale")

    def add_bias(self, bias: "Tensor") -> "Tensor":
        if self.ndim != 2 or bias.ndim != 1 or bias.shape[0] != self.shape[1]:
            raise ShapeError(f"add_bias: expected (m,n)+(n,), got {self.shape}+{bias.shape}")
        out = self.data + bias.data
        return _emit(out, (self, bias),
                     [(self, lambda g: g), (bias, lambda g: g.sum(axis=0))], "add_bias")

    def broadcast_cols(self, n: int) -> "Tensor":
        if self.ndim != 2 or self.shape[1] != 1:
            raise ShapeError(f"broadcast_cols expects (m,1), got {self.shape}")
        if n < 1:
            raise ShapeError("broadcast_cols: n must be positive")
        out = np.repeat(self.data, n, axis=1)
        return _emit(out, (self,), [(self, lambda g: g.sum(axis=1, keepdims=True))], "broadcast_cols")

    # -- elementwise nonlinearities --

    def sigmoid(self) -> "Tensor":
        out = _sigmoid_np(self.data)
        return _emit(out, (self,), [(self, lambda g: g * out * (1.0 - out))], "sigmoid")

    def exp(self) -> "Tensor":
        with np.errstate(over="ignore"):
            out = np.exp(self.data)
        return _emit(out, (self,), [(self, lambda g: g * out)], "exp")

    def log(self) -> "Tensor":
        if np.any(self.data <= 0.0):
            raise DomainError("log expects strictly positive input")
        a = self.data
        out = np.log(a)
        return _emit(out, (self,), [(self, lambda g: g / a)], "log")

    def gelu(self) -> "Tensor":
        # tanh approximation; the derivative below matches it exactly
        x = self.data
        inner = _GELU_C * (x + _GELU_A * x ** 3)
        t = np.tanh(inner)
        out = 0.5 * x * (1.0 + t)

        def pull(g: Array) -> Array:
            d_inner = _GELU_C * (1.0 + 3.0 * _GELU_A * x ** 2)
            return g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * d_inner)

        return _emit(out, (self,), [(self, pull)], "gelu")

    def softplus(self) -> "Tensor":
        x = self.data
        out = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
        return _emit(out, (self,), [(self, lambda g: g * _sigmoid_np(x))], "softplus")

    def clamp_min(self, floor: float) -> "Tensor":
        c = np.float32(floor)
        x = self.data
        out = np.maximum(x, c)
        return _emit(out, (self,), [(self, lambda g: g * (x > c).astype(np.float32))], "clamp_min")

    # -- normalizations and reductions --

    def softmax(self, axis: int) -> "Tensor":
        _check_axis(self, axis, "softmax")
        x = self.data
        m = x.max(axis=axis, keepdims=True)
        e = np.exp(x - m)
        out = e / e.sum(axis=axis, keepdims=True)

        def pull(g: Array) -> Array:
            dot = (g * out).sum(axis=axis, keepdims=True)
            return out * (g - dot)

        return _emit(out, (self,), [(self, pull)], "softmax")

    def logsumexp(self, axis: int) -> "Tensor":
        _check_axis(self, axis, "logsumexp")
        x = self.data
        m = x.max(axis=axis, keepdims=True)
        s = np.exp(x - m).sum(axis=axis, keepdims=True)
        out = np.squeeze(m + np.log(s), axis=axis)
        sm = np.exp(x - m) / s

        def pull(g: Array) -> Array:
            return np.expand_dims(g, axis) * sm

        return _emit(out, (self,), [(self, pull)], "logsumexp")

    def reduce_sum(self, axis: int | None = None) -> "Tensor":
        return self._reduce(axis, mean=False)

    def reduce_mean(self, axis: int | None = None) -> "Tensor":
        return self._reduce(axis, mean=True)

    def _reduce(self, axis: int | None, mean: bool) -> "Tensor":
        op = "reduce_mean" if mean else "reduce_sum"
        x = self.data
        if axis is None:
            count = x.size
        else:
            _check_axis(self, axis, op)
            count = x.shape[axis]
        if count == 0:
            raise DomainError(f"{op} over an empty axis")
        acc = x.sum(axis=axis, dtype=np.float64)
        if mean:
            acc = acc / count
        out = np.asarray(acc, dtype=np.float32)
        src_shape = x.shape
        inv = np.float32(1.0 / count) if mean else np.float32(1.0)

        def pull(g: Array) -> Array:
            if axis is None:
                return np.full(src_shape, np.float32(g) * inv, dtype=np.float32)
            return np.broadcast_to(np.expand_dims(g * inv, axis), src_shape)

        return _emit(out, (self,), [(self, pull)], op)

    def layer_norm(self, gain: "Tensor", bias: "Tensor", eps: float = 1e-5) -> "Tensor":
        n = self.shape[-1]
        if gain.shape != (n,) or bias.shape != (n,):
            raise ShapeError(f"layer_norm: gain/bias must be ({n},)")
        x64 = self.data.astype(np.float64)
        mu = x64.mean(axis=-1, keepdims=True)
        xc = x64 - mu
        var = (xc * xc).mean(axis=-1, keepdims=True)
        inv = 1.0 / np.sqrt(var + eps)
        xhat = (xc * inv).astype(np.float32)
        out = xhat * gain.data + bias.data
        inv32 = inv.astype(np.float32)
        gain_data = gain.data
        lead = tuple(range(self.ndim - 1))

        def pull_x(g: Array) -> Array:
            dxh = g * gain_data
            m1 = dxh.mean(axis=-1, keepdims=True)
            m2 = (dxh * xhat).mean(axis=-1, keepdims=True)
            return inv32 * (dxh - m1 - xhat * m2)

        return _emit(out, (self, gain, bias),
                     [(self, pull_x),
                      (gain, lambda g: np.sum(g * xhat, axis=lead)),
                      (bias, lambda g: np.sum(g, axis=lead))], "layer_norm")

    def l2_normalize(self, eps: float = 0.0) -> "Tensor":
        """Normalize the last axis to unit Euclidean length.

        With eps > 0 the divisor is clamped below, so short rows shrink
        toward zero instead of raising; eps = 0 keeps the strict error.
        """
        x = self.data
        norm64 = np.sqrt((x.astype(np.float64) ** 2).sum(axis=-1, keepdims=True))
        if eps <= 0.0 and np.any(norm64 < 1e-12):
            raise NumericError("l2_normalize: zero-norm row")
        scale64 = np.maximum(norm64, eps)
        scale = scale64.astype(np.float32)
        out = x / scale
        clamped = norm64 < eps

        def pull(g: Array) -> Array:
            dot = (g * out).sum(axis=-1, keepdims=True)
            # clamped rows rescale by a constant, so no radial projection
            radial = np.where(clamped, 0.0, dot).astype(np.float32)
            return (g - out * radial) / scale

        return _emit(out, (self,), [(self, pull)], "l2_normalize")


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    if not tensors:
        raise ShapeError("concat of an empty sequence")
    nd = tensors[0].ndim
    if any(t.ndim != nd for t in tensors):
        raise ShapeError("concat: rank mismatch")
    if axis < 0 or axis >= nd:
        raise ShapeError(f"concat: axis {axis} out of range")
    for d in range(nd):
        if d == axis:
            continue
        sizes = {t.shape[d] for t in tensors}
        if len(sizes) > 1:
            raise ShapeError(f"concat: mismatch on axis {d}")
    out = np.concatenate([t.data for t in tensors], axis=axis)
    pulls = []
    offset = 0
    for t in tensors:
        length = t.shape[axis]
        idx = tuple(slice(None) if d != axis else slice(offset, offset + length)
                    for d in range(nd))
        pulls.append((t, (lambda i: lambda g: g[i].copy())(idx)))
        offset += length
    return _emit(out, tensors, pulls, "concat")


def _check_axis(t: Tensor, axis: int, op: str) -> None:
    if axis < 0 or axis >= t.ndim:
        raise ShapeError(f"{op}: axis {axis} out of range for {t.shape}")


def _sigmoid_np(x: Array) -> Array:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


class Parameter:
    """Named trainable array, bound to a fresh Tensor on every forward pass."""

    __slots__ = ("name", "array", "trainable")

    def __init__(self, name: str, array: Array, trainable: bool = True):
        self.name = name
        self.array = _as_f32(array)
        self.trainable = trainable

    def bind(self, tape: Tape | None) -> Tensor:
        return Tensor(self.array, tape)

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.array.shape})"
