"""
Dense float64 tensors with reverse-mode automatic differentiation.

Every differentiable operation is a ``Function`` subclass. ``Function.apply``
runs the numpy forward and, when any input requires a gradient, records the
function as a node. ``Graph.trace`` collects the nodes reachable from an
output in creation order, and ``Graph.backward`` visits them in exact reverse
of that order, accumulating gradients into leaf tensors.

There is no implicit broadcasting except between a tensor and a scalar
(size-1) operand; use ``expand`` to broadcast explicitly.
"""

import itertools
import logging
import threading
from contextlib import contextmanager
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import log_softmax as _log_softmax, softmax as _softmax

from utils.error_handler import NumericalError, ShapeError

logger = logging.getLogger(__name__)

DTYPE = np.float64

_sequence = itertools.count()
_state = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_state, 'grad_enabled', True)


@contextmanager
def no_grad():
    """Disable graph recording in the current thread."""
    previous = is_grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = previous


class Tensor:
    """A dense array of 64-bit reals with an optional gradient."""

    __slots__ = ("data", "requires_grad", "grad", "node", "name", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.array(data, dtype=DTYPE)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.node: Optional["Function"] = None
        self.name = name

    @classmethod
    def _from_op(cls, array: np.ndarray, requires_grad: bool) -> "Tensor":
        t = cls.__new__(cls)
        t.data = np.asarray(array, dtype=DTYPE)
        t.requires_grad = requires_grad
        t.grad = None
        t.node = None
        t.name = None
        return t

    # --- introspection ---------------------------------------------------
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
            raise ShapeError(f"item: tensor of shape {self.shape} is not a scalar")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor._from_op(self.data, False)

    def zero_grad(self):
        self.grad = None

    def __repr__(self) -> str:
        label = f" {self.name}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"

    # --- autodiff --------------------------------------------------------
    def backward(self, grad: Optional[np.ndarray] = None):
        """Back-propagate from this tensor; a scalar output seeds with 1."""
        if grad is None:
            if self.data.size != 1:
                raise ShapeError(f"backward: implicit seed needs a scalar, got shape {self.shape}")
            grad = np.ones_like(self.data)
        grad = np.asarray(grad, dtype=DTYPE)
        if grad.shape != self.shape:
            raise ShapeError(f"backward: seed shape {grad.shape} does not match {self.shape}")
        if self.node is None:
            if self.requires_grad:
                self.grad = grad.copy() if self.grad is None else self.grad + grad
            return
        Graph.trace(self).backward(self, grad)

    # --- operators -------------------------------------------------------
    def __add__(self, other): return add(self, other)
    def __radd__(self, other): return add(other, self)
    def __sub__(self, other): return sub(self, other)
    def __rsub__(self, other): return sub(other, self)
    def __mul__(self, other): return mul(self, other)
    def __rmul__(self, other): return mul(other, self)
    def __neg__(self): return neg(self)
    def __matmul__(self, other): return matmul(self, other)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, power(other, -1.0))
        return mul(self, 1.0 / float(other))

    def __pow__(self, exponent: float): return power(self, exponent)
    def __getitem__(self, key): return slice_(self, key)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = shape[0]
        return reshape(self, shape)

    def transpose(self, *axes): return transpose(self, axes if axes else None)
    def sum(self, axis=None, keepdims=False): return sum_(self, axis, keepdims)
    def mean(self, axis=None, keepdims=False): return mean(self, axis, keepdims)
    def sigmoid(self): return sigmoid(self)
    def tanh(self): return tanh(self)
    def relu(self): return relu(self)
    def elu(self): return elu(self)
    def exp(self): return exp(self)
    def log(self): return log(self)
    def abs(self): return abs_(self)


def as_tensor(value) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


class Function:
    """A recorded primitive operation with its own backward rule."""

    name = "function"

    def __init__(self, **attrs):
        self.attrs = attrs
        self.inputs: Tuple[Tensor, ...] = ()
        self.outputs: Tuple[Tensor, ...] = ()
        self.sequence = -1

    def forward(self, *arrays):
        raise NotImplementedError

    def backward(self, *grads):
        raise NotImplementedError

    @classmethod
    def apply(cls, *inputs, **attrs):
        tensors = tuple(as_tensor(x) for x in inputs)
        fn = cls(**attrs)
        fn.inputs = tensors
        out = fn.forward(*(t.data for t in tensors))
        multi = isinstance(out, tuple)
        arrays = out if multi else (out,)
        record = is_grad_enabled() and any(t.requires_grad for t in tensors)
        results = tuple(Tensor._from_op(a, record) for a in arrays)
        if record:
            fn.outputs = results
            fn.sequence = next(_sequence)
            for r in results:
                r.node = fn
        else:
            fn.inputs = ()
            fn.release()
        return results if multi else results[0]

    def release(self):
        """Drop forward caches when the node is not recorded."""
        self.__dict__.pop('cache', None)


class Graph:
    """Nodes reachable from one output, in forward creation order."""

    def __init__(self, nodes: List[Function]):
        self.nodes = nodes

    @classmethod
    def trace(cls, output: Tensor) -> "Graph":
        seen = set()
        nodes: List[Function] = []
        stack = [output.node] if output.node is not None else []
        while stack:
            node = stack.pop()
            if id(node) in seen:
                continue
            seen.add(id(node))
            nodes.append(node)
            for t in node.inputs:
                if t.node is not None and id(t.node) not in seen:
                    stack.append(t.node)
        nodes.sort(key=lambda n: n.sequence)
        return cls(nodes)

    def backward(self, output: Tensor, seed: np.ndarray):
        grads = {id(output): seed}
        for node in reversed(self.nodes):
            outputs = [grads.pop(id(o), None) for o in node.outputs]
            if all(g is None for g in outputs):
                continue
            outputs = [np.zeros_like(o.data) if g is None else g
                       for g, o in zip(outputs, node.outputs)]
            input_grads = node.backward(*outputs)
            if not isinstance(input_grads, tuple):
                input_grads = (input_grads,)
            for t, g in zip(node.inputs, input_grads):
                if g is None or not t.requires_grad:
                    continue
                if t.node is None:
                    t.grad = np.array(g, dtype=DTYPE) if t.grad is None else t.grad + g
                else:
                    key = id(t)
                    grads[key] = g if key not in grads else grads[key] + g


# --------------------------------------------------------------------------
# elementwise binary operations

def _binary_shapes(name: str, a: np.ndarray, b: np.ndarray):
    if a.shape != b.shape and a.size != 1 and b.size != 1:
        raise ShapeError(f"{name}: shapes {a.shape} and {b.shape} do not conform")


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    return np.asarray(grad.sum(), dtype=DTYPE).reshape(shape)


class Add(Function):
    name = "add"

    def forward(self, a, b):
        _binary_shapes(self.name, a, b)
        self.shapes = (a.shape, b.shape)
        return a + b

    def backward(self, g):
        return _unbroadcast(g, self.shapes[0]), _unbroadcast(g, self.shapes[1])


class Sub(Function):
    name = "sub"

    def forward(self, a, b):
        _binary_shapes(self.name, a, b)
        self.shapes = (a.shape, b.shape)
        return a - b

    def backward(self, g):
        return _unbroadcast(g, self.shapes[0]), _unbroadcast(-g, self.shapes[1])


class Mul(Function):
    name = "mul"

    def forward(self, a, b):
        _binary_shapes(self.name, a, b)
        self.cache = (a, b)
        return a * b

    def backward(self, g):
        a, b = self.cache
        return _unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)


class Neg(Function):
    name = "neg"

    def forward(self, a):
        return -a

    def backward(self, g):
        return -g


class MatMul(Function):
    name = "matmul"

    def forward(self, a, b):
        if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
            raise ShapeError(f"{self.name}: shapes {a.shape} and {b.shape} do not conform")
        self.cache = (a, b)
        return a @ b

    def backward(self, g):
        a, b = self.cache
        return g @ b.T, a.T @ g


# --------------------------------------------------------------------------
# structural operations

class Concat(Function):
    name = "concat"

    def forward(self, *arrays):
        axis = self.attrs['axis']
        ref = arrays[0].shape
        for arr in arrays[1:]:
            if arr.ndim != len(ref) or any(
                    d != r for i, (d, r) in enumerate(zip(arr.shape, ref)) if i != axis % len(ref)):
                raise ShapeError(f"{self.name}: shapes {ref} and {arr.shape} do not conform on axis {axis}")
        self.sizes = [arr.shape[axis] for arr in arrays]
        return np.concatenate(arrays, axis=axis)

    def backward(self, g):
        bounds = np.cumsum(self.sizes)[:-1]
        return tuple(np.split(g, bounds, axis=self.attrs['axis']))


class Stack(Function):
    name = "stack"

    def forward(self, *arrays):
        ref = arrays[0].shape
        for arr in arrays[1:]:
            if arr.shape != ref:
                raise ShapeError(f"{self.name}: shapes {ref} and {arr.shape} do not conform")
        return np.stack(arrays, axis=self.attrs['axis'])

    def backward(self, g):
        axis = self.attrs['axis']
        return tuple(np.take(g, i, axis=axis) for i in range(g.shape[axis]))


class Unbind(Function):
    """Split along an axis into separate tensors (one graph node)."""
    name = "unbind"

    def forward(self, a):
        axis = self.attrs['axis']
        self.shape = a.shape
        return tuple(np.take(a, i, axis=axis) for i in range(a.shape[axis]))

    def backward(self, *grads):
        return np.stack(grads, axis=self.attrs['axis'])


class Slice(Function):
    name = "slice"

    def forward(self, a):
        key = self.attrs['key']
        self.shape = a.shape
        try:
            out = a[key]
        except IndexError as exc:
            raise ShapeError(f"{self.name}: key {key!r} invalid for shape {a.shape}") from exc
        return np.array(out, dtype=DTYPE)

    def backward(self, g):
        full = np.zeros(self.shape, dtype=DTYPE)
        np.add.at(full, self.attrs['key'], g)
        return full


class Reshape(Function):
    name = "reshape"

    def forward(self, a):
        shape = tuple(self.attrs['shape'])
        self.original = a.shape
        if int(np.prod(shape)) != a.size and -1 not in shape:
            raise ShapeError(f"{self.name}: cannot view {a.shape} as {shape}")
        try:
            return a.reshape(shape)
        except ValueError as exc:
            raise ShapeError(f"{self.name}: cannot view {a.shape} as {shape}") from exc

    def backward(self, g):
        return g.reshape(self.original)


class Transpose(Function):
    name = "transpose"

    def forward(self, a):
        axes = self.attrs['axes']
        if axes is None:
            axes = tuple(reversed(range(a.ndim)))
        if sorted(axes) != list(range(a.ndim)):
            raise ShapeError(f"{self.name}: axes {axes} invalid for shape {a.shape}")
        self.axes = tuple(axes)
        return np.transpose(a, self.axes)

    def backward(self, g):
        return np.transpose(g, np.argsort(self.axes))


class Expand(Function):
    """Explicit broadcast of size-1 axes to a target shape of equal rank."""
    name = "expand"

    def forward(self, a):
        shape = tuple(self.attrs['shape'])
        if a.ndim != len(shape) or any(s != 1 and s != t for s, t in zip(a.shape, shape)):
            raise ShapeError(f"{self.name}: cannot expand {a.shape} to {shape}")
        self.original = a.shape
        return np.broadcast_to(a, shape).copy()

    def backward(self, g):
        axes = tuple(i for i, (s, t) in enumerate(zip(self.original, g.shape)) if s == 1 and t != 1)
        return g.sum(axis=axes, keepdims=True) if axes else g


class Pad(Function):
    """Zero padding; ``widths`` is one (before, after) pair per axis."""
    name = "pad"

    def forward(self, a):
        widths = tuple(tuple(w) for w in self.attrs['widths'])
        if len(widths) != a.ndim or any(w < 0 for pair in widths for w in pair):
            raise ShapeError(f"{self.name}: widths {widths} invalid for shape {a.shape}")
        self.key = tuple(slice(lo, lo + n) for (lo, _), n in zip(widths, a.shape))
        return np.pad(a, widths)

    def backward(self, g):
        return g[self.key]


# --------------------------------------------------------------------------
# elementwise nonlinearities

class Sigmoid(Function):
    name = "sigmoid"

    def forward(self, a):
        out = np.empty_like(a)
        pos = a >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
        ea = np.exp(a[~pos])
        out[~pos] = ea / (1.0 + ea)
        self.cache = out
        return out

    def backward(self, g):
        s = self.cache
        return g * s * (1.0 - s)


class Tanh(Function):
    name = "tanh"

    def forward(self, a):
        self.cache = np.tanh(a)
        return self.cache

    def backward(self, g):
        return g * (1.0 - self.cache ** 2)


class Relu(Function):
    name = "relu"

    def forward(self, a):
        self.cache = a > 0
        return np.where(self.cache, a, 0.0)

    def backward(self, g):
        return g * self.cache


class Elu(Function):
    name = "elu"

    def forward(self, a):
        neg_part = np.expm1(np.minimum(a, 0.0))
        self.cache = (a > 0, neg_part)
        return np.where(a > 0, a, neg_part)

    def backward(self, g):
        positive, neg_part = self.cache
        return g * np.where(positive, 1.0, neg_part + 1.0)


class Exp(Function):
    name = "exp"

    def forward(self, a):
        self.cache = np.exp(a)
        return self.cache

    def backward(self, g):
        return g * self.cache


class Log(Function):
    name = "log"

    def forward(self, a):
        if np.any(a <= 0):
            raise NumericalError(f"{self.name}: non-positive input")
        self.cache = a
        return np.log(a)

    def backward(self, g):
        return g / self.cache


class Abs(Function):
    name = "abs"

    def forward(self, a):
        self.cache = np.sign(a)
        return np.abs(a)

    def backward(self, g):
        return g * self.cache


class Power(Function):
    name = "power"

    def forward(self, a):
        p = self.attrs['exponent']
        self.cache = a
        return np.power(a, p)

    def backward(self, g):
        p = self.attrs['exponent']
        return g * p * np.power(self.cache, p - 1.0)


class ClampMin(Function):
    name = "clamp_min"

    def forward(self, a):
        self.cache = a >= self.attrs['minimum']
        return np.maximum(a, self.attrs['minimum'])

    def backward(self, g):
        return g * self.cache


class Softmax(Function):
    name = "softmax"

    def forward(self, a):
        self.cache = _softmax(a, axis=self.attrs['axis'])
        return self.cache

    def backward(self, g):
        s = self.cache
        axis = self.attrs['axis']
        return s * (g - np.sum(g * s, axis=axis, keepdims=True))


class LogSoftmax(Function):
    name = "log_softmax"

    def forward(self, a):
        out = _log_softmax(a, axis=self.attrs['axis'])
        self.cache = out
        return out

    def backward(self, g):
        axis = self.attrs['axis']
        return g - np.exp(self.cache) * np.sum(g, axis=axis, keepdims=True)


# --------------------------------------------------------------------------
# reductions

class Sum(Function):
    name = "sum"

    def forward(self, a):
        self.shape = a.shape
        return np.asarray(np.sum(a, axis=self.attrs['axis'], keepdims=self.attrs['keepdims']))

    def backward(self, g):
        axis = self.attrs['axis']
        if axis is not None and not self.attrs['keepdims']:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, self.shape).copy()


class Mean(Function):
    name = "mean"

    def forward(self, a):
        self.shape = a.shape
        axis = self.attrs['axis']
        self.count = a.size if axis is None else int(np.prod([a.shape[i] for i in np.atleast_1d(axis)]))
        return np.asarray(np.mean(a, axis=axis, keepdims=self.attrs['keepdims']))

    def backward(self, g):
        axis = self.attrs['axis']
        if axis is not None and not self.attrs['keepdims']:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g / self.count, self.shape).copy()


# --------------------------------------------------------------------------
# convolution, recurrence and spectral rearrangement

class Conv2d(Function):
    """Cross-correlation of x (C, H, W) with w (O, C, kh, kw) plus bias b (O,)."""
    name = "conv2d"

    def forward(self, x, w, b):
        if x.ndim != 3 or w.ndim != 4 or w.shape[1] != x.shape[0] or b.shape != (w.shape[0],):
            raise ShapeError(f"{self.name}: shapes {x.shape} and {w.shape} do not conform")
        (pt0, pt1), (pf0, pf1) = self.attrs['padding']
        sh, sw = self.attrs['stride']
        _, kh, kw = w.shape[1:]
        xp = np.pad(x, ((0, 0), (pt0, pt1), (pf0, pf1)))
        ho = (xp.shape[1] - kh) // sh + 1
        wo = (xp.shape[2] - kw) // sw + 1
        if ho < 1 or wo < 1:
            raise ShapeError(f"{self.name}: input {x.shape} too small for kernel {w.shape}")
        out = np.zeros((w.shape[0], ho, wo), dtype=DTYPE)
        for i in range(kh):
            for j in range(kw):
                patch = xp[:, i:i + sh * (ho - 1) + 1:sh, j:j + sw * (wo - 1) + 1:sw]
                out += np.tensordot(w[:, :, i, j], patch, axes=(1, 0))
        out += b[:, None, None]
        self.cache = (xp, w, x.shape)
        return out

    def backward(self, g):
        xp, w, x_shape = self.cache
        (pt0, _), (pf0, _) = self.attrs['padding']
        sh, sw = self.attrs['stride']
        _, ho, wo = g.shape
        gw = np.zeros_like(w)
        gxp = np.zeros_like(xp)
        for i in range(w.shape[2]):
            for j in range(w.shape[3]):
                key = (slice(None), slice(i, i + sh * (ho - 1) + 1, sh), slice(j, j + sw * (wo - 1) + 1, sw))
                gw[:, :, i, j] = np.tensordot(g, xp[key], axes=([1, 2], [1, 2]))
                gxp[key] += np.tensordot(w[:, :, i, j], g, axes=(0, 0))
        gx = gxp[:, pt0:pt0 + x_shape[1], pf0:pf0 + x_shape[2]]
        return gx, gw, g.sum(axis=(1, 2))


class LstmCell(Function):
    """
    One LSTM step with gates ordered (input, forget, cell, output).

    Inputs are the precomputed input projection gx (B, 4H), the previous
    hidden and cell states (B, H) and the recurrent weights wh (H, 4H).
    Returns (h, c).
    """
    name = "lstm_cell"

    def forward(self, gx, h, c, wh):
        hidden = h.shape[1]
        if gx.shape != (h.shape[0], 4 * hidden) or c.shape != h.shape or wh.shape != (hidden, 4 * hidden):
            raise ShapeError(f"{self.name}: shapes {gx.shape} and {wh.shape} do not conform")
        z = gx + h @ wh
        i = Sigmoid().forward(z[:, :hidden])
        f = Sigmoid().forward(z[:, hidden:2 * hidden])
        u = np.tanh(z[:, 2 * hidden:3 * hidden])
        o = Sigmoid().forward(z[:, 3 * hidden:])
        c_new = f * c + i * u
        tc = np.tanh(c_new)
        h_new = o * tc
        self.cache = (h, c, wh, i, f, u, o, tc)
        return h_new, c_new

    def backward(self, gh, gc):
        h, c, wh, i, f, u, o, tc = self.cache
        do = gh * tc
        dc = gc + gh * o * (1.0 - tc ** 2)
        dz = np.concatenate([
            dc * u * i * (1.0 - i),
            dc * c * f * (1.0 - f),
            dc * i * (1.0 - u ** 2),
            do * o * (1.0 - o),
        ], axis=1)
        return dz, dz @ wh.T, dc * f, h.T @ dz


class PixelShuffleFreq(Function):
    """(r·C, T, F) -> (C, T, r·F) with out[c, t, r·f + k] = x[r·c + k, t, f]."""
    name = "pixel_shuffle_freq"

    def forward(self, x):
        r = self.attrs['factor']
        if x.ndim != 3 or x.shape[0] % r:
            raise ShapeError(f"{self.name}: channel count of {x.shape} not divisible by {r}")
        c, t, f = x.shape
        return x.reshape(c // r, r, t, f).transpose(0, 2, 3, 1).reshape(c // r, t, f * r)

    def backward(self, g):
        return _unshuffle(g, self.attrs['factor'])


class PixelUnshuffleFreq(Function):
    """Inverse of ``PixelShuffleFreq``: (C, T, r·F) -> (r·C, T, F)."""
    name = "pixel_unshuffle_freq"

    def forward(self, x):
        r = self.attrs['factor']
        if x.ndim != 3 or x.shape[2] % r:
            raise ShapeError(f"{self.name}: frequency axis of {x.shape} not divisible by {r}")
        return _unshuffle(x, r)

    def backward(self, g):
        return PixelShuffleFreq(factor=self.attrs['factor']).forward(g)


def _unshuffle(x: np.ndarray, r: int) -> np.ndarray:
    c, t, f = x.shape
    return x.reshape(c, t, f // r, r).transpose(0, 3, 1, 2).reshape(c * r, t, f // r)


class FrameSignal(Function):
    """Cut a 1-D signal into overlapping frames (T, frame)."""
    name = "frame_signal"

    def forward(self, x):
        frame, shift = self.attrs['frame'], self.attrs['shift']
        if x.ndim != 1 or x.shape[0] < frame:
            raise ShapeError(f"{self.name}: signal of shape {x.shape} shorter than one frame ({frame})")
        self.length = x.shape[0]
        frames = np.lib.stride_tricks.sliding_window_view(x, frame)[::shift]
        self.index = np.arange(frames.shape[0])[:, None] * shift + np.arange(frame)[None, :]
        return np.array(frames, dtype=DTYPE)

    def backward(self, g):
        out = np.zeros(self.length, dtype=DTYPE)
        np.add.at(out, self.index, g)
        return out


class OverlapAdd(Function):
    """Sum frames (T, frame) at multiples of ``shift`` into a signal of ``length``."""
    name = "overlap_add"

    def forward(self, frames):
        shift, length = self.attrs['shift'], self.attrs['length']
        n, frame = frames.shape
        if length < (n - 1) * shift + frame:
            raise ShapeError(f"{self.name}: length {length} too short for frames {frames.shape}")
        self.index = np.arange(n)[:, None] * shift + np.arange(frame)[None, :]
        out = np.zeros(length, dtype=DTYPE)
        np.add.at(out, self.index, frames)
        return out

    def backward(self, g):
        return g[self.index]


# --------------------------------------------------------------------------
# functional interface

def add(a, b) -> Tensor: return Add.apply(a, b)
def sub(a, b) -> Tensor: return Sub.apply(a, b)
def mul(a, b) -> Tensor: return Mul.apply(a, b)
def neg(a) -> Tensor: return Neg.apply(a)
def matmul(a, b) -> Tensor: return MatMul.apply(a, b)
def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor: return Concat.apply(*tensors, axis=axis)
def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor: return Stack.apply(*tensors, axis=axis)
def slice_(a, key) -> Tensor: return Slice.apply(a, key=key)
def reshape(a, shape) -> Tensor: return Reshape.apply(a, shape=tuple(shape))
def transpose(a, axes=None) -> Tensor: return Transpose.apply(a, axes=None if axes is None else tuple(axes))
def expand(a, shape) -> Tensor: return Expand.apply(a, shape=tuple(shape))
def pad(a, widths) -> Tensor: return Pad.apply(a, widths=widths)
def sigmoid(a) -> Tensor: return Sigmoid.apply(a)
def tanh(a) -> Tensor: return Tanh.apply(a)
def relu(a) -> Tensor: return Relu.apply(a)
def elu(a) -> Tensor: return Elu.apply(a)
def exp(a) -> Tensor: return Exp.apply(a)
def log(a) -> Tensor: return Log.apply(a)
def abs_(a) -> Tensor: return Abs.apply(a)
def power(a, exponent: float) -> Tensor: return Power.apply(a, exponent=float(exponent))
def clamp_min(a, minimum: float) -> Tensor: return ClampMin.apply(a, minimum=float(minimum))
def softmax(a, axis: int = -1) -> Tensor: return Softmax.apply(a, axis=axis)
def log_softmax(a, axis: int = -1) -> Tensor: return LogSoftmax.apply(a, axis=axis)
def sum_(a, axis=None, keepdims: bool = False) -> Tensor: return Sum.apply(a, axis=axis, keepdims=keepdims)
def mean(a, axis=None, keepdims: bool = False) -> Tensor: return Mean.apply(a, axis=axis, keepdims=keepdims)
def pixel_shuffle_freq(x, factor: int = 2) -> Tensor: return PixelShuffleFreq.apply(x, factor=factor)
def pixel_unshuffle_freq(x, factor: int = 2) -> Tensor: return PixelUnshuffleFreq.apply(x, factor=factor)
def frame_signal(x, frame: int, shift: int) -> Tensor: return FrameSignal.apply(x, frame=frame, shift=shift)
def overlap_add(frames, shift: int, length: int) -> Tensor: return OverlapAdd.apply(frames, shift=shift, length=length)


def unbind(a, axis: int = 0) -> Tuple[Tensor, ...]:
    out = Unbind.apply(a, axis=axis)
    return out if isinstance(out, tuple) else (out,)


def conv2d(x, w, b, stride=(1, 1), padding=((0, 0), (0, 0))) -> Tensor:
    return Conv2d.apply(x, w, b, stride=tuple(stride), padding=tuple(tuple(p) for p in padding))


def lstm_cell(gx, h, c, wh) -> Tuple[Tensor, Tensor]:
    return LstmCell.apply(gx, h, c, wh)


# --------------------------------------------------------------------------
# finite-difference verification

def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, eps: float = 1e-5,
               max_checks: Optional[int] = None, seed: int = 0,
               floor: float = 1e-4) -> float:
    """
    Compare the analytic gradient of a scalar function with central differences.

    Args:
        f: Function of ``x`` returning a scalar tensor
        x: Tensor to differentiate with respect to (its data is perturbed in place)
        eps: Finite-difference step
        max_checks: Check only this many randomly chosen coordinates
        seed: Seed for the coordinate sample
        floor: Lower bound of the relative-error denominator

    Returns:
        Maximum relative error |analytic - numeric| / max(|analytic|, |numeric|, floor)
    """
    original = x.data.copy()
    was_required = x.requires_grad
    x.requires_grad = True
    x.grad = None
    try:
        value = f(x)
        if not np.all(np.isfinite(value.data)):
            raise NumericalError("grad_check: f(x) is not finite")
        value.backward()
        analytic = x.grad if x.grad is not None else np.zeros_like(original)
        analytic = analytic.reshape(-1)

        indices = np.arange(original.size)
        if max_checks is not None and max_checks < original.size:
            indices = np.random.default_rng(seed).choice(original.size, size=max_checks, replace=False)

        worst = 0.0
        with no_grad():
            for idx in indices:
                bumped = original.copy()
                bumped.flat[idx] += eps
                x.data = bumped
                f_plus = f(x).item()
                bumped = original.copy()
                bumped.flat[idx] -= eps
                x.data = bumped
                f_minus = f(x).item()
                numeric = (f_plus - f_minus) / (2.0 * eps)
                a = analytic[idx]
                err = abs(a - numeric) / max(abs(a), abs(numeric), floor)
                worst = max(worst, err)
        logger.debug("grad_check over %d coordinates: max relative error %.3e", len(indices), worst)
        return worst
    finally:
        x.data = original
        x.grad = None
        x.requires_grad = was_required
