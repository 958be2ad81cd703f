"""Dense tensors and reverse-mode automatic differentiation.

Every numeric kernel in the library runs through this module: elementwise
arithmetic, convolution, activations, pooling, softmax, layer norm, matrix
products, and the shape-shuffling ops the restoration blocks need.  Values
are numpy arrays (float64 by default, float32 selectable).  Differentiable
operations append an entry to a global tape; ``backward`` replays the tape
in exact reverse of recording order and populates ``.grad`` on every leaf
that requires gradients.  The tape is consumed by ``backward``: build the
graph, call ``backward`` once, repeat.

Convolution follows the deep-learning convention (cross-correlation, no
kernel flip).  Broadcasting follows numpy semantics; gradients of broadcast
operands are reduced back to the operand's shape.
"""

from __future__ import annotations

import contextlib
import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import erf as _erf, expit as _expit

from .errors import (
    DivisionByZero,
    InvalidGroups,
    NonFiniteValue,
    NonScalarLoss,
    ShapeMismatch,
)

DEFAULT_DTYPE = np.float64

_FLOAT_DTYPES = (np.float32, np.float64)

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


# ---------------------------------------------------------------------------
# Tensor and tape
# ---------------------------------------------------------------------------

class Tensor:
    """Dense N-dimensional array with an optional gradient slot.

    Tensors are immutable after construction except through recorded
    operations; parameters are leaves created with ``requires_grad=True``.
    """

    __slots__ = ("data", "requires_grad", "grad", "_track")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(DEFAULT_DTYPE)
        _check_finite(arr)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._track = self.requires_grad

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeMismatch(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data.astype(dtype), requires_grad=self.requires_grad)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    # arithmetic sugar; scalars are promoted to constant tensors
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

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return reduce_mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)

    def abs(self) -> "Tensor":
        return absolute(self)

    def sqrt(self) -> "Tensor":
        return sqrt(self)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={tuple(self.shape)}, dtype={self.data.dtype.name}{flag})"


class _Entry:
    __slots__ = ("outputs", "inputs", "backward_fn")

    def __init__(self, outputs, inputs, backward_fn):
        self.outputs = outputs
        self.inputs = inputs
        self.backward_fn = backward_fn


class ComputationTape:
    """Ordered record of differentiable operations plus the leaf set.

    Backward visits entries in exact reverse of recording order.  Leaves are
    the requires-grad tensors that participated in any recorded operation
    since the last clear; leaves unreachable from the loss receive an
    explicit zero gradient.
    """

    def __init__(self):
        self.entries: list[_Entry] = []
        self.leaves: dict[int, Tensor] = {}

    def clear(self) -> None:
        self.entries.clear()
        self.leaves.clear()

    def __len__(self) -> int:
        return len(self.entries)


_TAPE = ComputationTape()
_GRAD_ENABLED = True
_FINITE_CHECKS = True


def get_tape() -> ComputationTape:
    return _TAPE


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (inference, data generation)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


@contextlib.contextmanager
def finite_checks(enabled: bool):
    global _FINITE_CHECKS
    prev = _FINITE_CHECKS
    _FINITE_CHECKS = enabled
    try:
        yield
    finally:
        _FINITE_CHECKS = prev


def _check_finite(arr: np.ndarray) -> None:
    if _FINITE_CHECKS and not np.isfinite(arr).all():
        raise NonFiniteValue("tensor contains NaN or Inf")


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=DEFAULT_DTYPE))


def _result(data: np.ndarray, inputs, backward_fn) -> Tensor:
    """Wrap `data`; record the op when any input is on the tape."""
    out = Tensor(data)
    if _GRAD_ENABLED and any(t._track for t in inputs):
        for t in inputs:
            if t.requires_grad:
                _TAPE.leaves.setdefault(id(t), t)
        out._track = True
        _TAPE.entries.append(_Entry((out,), tuple(inputs), backward_fn))
    return out


def _result_multi(datas, inputs, backward_fn):
    outs = tuple(Tensor(d) for d in datas)
    if _GRAD_ENABLED and any(t._track for t in inputs):
        for t in inputs:
            if t.requires_grad:
                _TAPE.leaves.setdefault(id(t), t)
        for o in outs:
            o._track = True
        _TAPE.entries.append(_Entry(outs, tuple(inputs), backward_fn))
    return outs


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every leaf reachable from a scalar loss.

    Consumes the tape: entries recorded so far are released afterwards.
    Leaves on the tape that the loss does not reach get a zero gradient.
    """
    if not isinstance(loss, Tensor) or loss.size != 1:
        raise NonScalarLoss("backward requires a scalar tensor")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for entry in reversed(_TAPE.entries):
        if not any(id(o) in grads for o in entry.outputs):
            continue
        gouts = tuple(
            grads.get(id(o)) if grads.get(id(o)) is not None else np.zeros_like(o.data)
            for o in entry.outputs
        )
        gins = entry.backward_fn(*gouts)
        for t, g in zip(entry.inputs, gins):
            if g is None:
                continue
            tid = id(t)
            if tid in grads:
                grads[tid] = grads[tid] + g
            else:
                grads[tid] = g
    for tid, leaf in _TAPE.leaves.items():
        g = grads.get(tid)
        if g is None:
            g = np.zeros_like(leaf.data)
        g = np.asarray(g, dtype=leaf.data.dtype).reshape(leaf.data.shape)
        leaf.grad = g if leaf.grad is None else leaf.grad + g
    _TAPE.clear()


# ---------------------------------------------------------------------------
# Elementwise arithmetic
# ---------------------------------------------------------------------------

def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Reduce a broadcast gradient back to `shape` by summing."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _broadcast_check(a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeMismatch(f"cannot broadcast {a.shape} with {b.shape}") from None


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_check(a, b)

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result(a.data + b.data, (a, b), bwd)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_check(a, b)

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _result(a.data - b.data, (a, b), bwd)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_check(a, b)

    def bwd(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _result(a.data * b.data, (a, b), bwd)


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _broadcast_check(a, b)
    if np.any(b.data == 0.0):
        raise DivisionByZero("division requires |denominator| > 0 elementwise")

    def bwd(g):
        ga = _unbroadcast(g / b.data, a.shape)
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape)
        return ga, gb

    return _result(a.data / b.data, (a, b), bwd)


_ELEMENTWISE = {"add": add, "sub": sub, "mul": mul, "div": div}


def elementwise(a, b, kind: str) -> Tensor:
    """Dispatch add/sub/mul/div by name."""
    try:
        op = _ELEMENTWISE[kind]
    except KeyError:
        raise ValueError(f"unknown elementwise kind {kind!r}") from None
    return op(a, b)


def neg(a) -> Tensor:
    a = _as_tensor(a)
    return _result(-a.data, (a,), lambda g: (-g,))


def absolute(a) -> Tensor:
    a = _as_tensor(a)

    def bwd(g):
        return (g * np.sign(a.data),)

    return _result(np.abs(a.data), (a,), bwd)


def sqrt(a) -> Tensor:
    a = _as_tensor(a)
    root = np.sqrt(a.data)

    def bwd(g):
        return (g * (0.5 / root),)

    return _result(root, (a,), bwd)


# ---------------------------------------------------------------------------
# Activations
# ---------------------------------------------------------------------------

def gelu(x) -> Tensor:
    """Exact-erf GELU: 0.5 * x * (1 + erf(x / sqrt(2)))."""
    x = _as_tensor(x)
    e = _erf(x.data * _INV_SQRT2)

    def bwd(g):
        pdf = np.exp(-0.5 * x.data * x.data) * _INV_SQRT2PI
        return (g * (0.5 * (1.0 + e) + x.data * pdf),)

    return _result(0.5 * x.data * (1.0 + e), (x,), bwd)


def relu(x) -> Tensor:
    x = _as_tensor(x)

    def bwd(g):
        return (g * (x.data > 0.0),)

    return _result(np.maximum(x.data, 0.0), (x,), bwd)


def sigmoid(x) -> Tensor:
    x = _as_tensor(x)
    s = _expit(x.data)

    def bwd(g):
        return (g * s * (1.0 - s),)

    return _result(s, (x,), bwd)


_ACTIVATIONS = {"gelu": gelu, "relu": relu, "sigmoid": sigmoid}


def activation(x, kind: str) -> Tensor:
    try:
        fn = _ACTIVATIONS[kind]
    except KeyError:
        raise ValueError(f"unknown activation kind {kind!r}") from None
    return fn(x)


# ---------------------------------------------------------------------------
# Reductions and shape ops
# ---------------------------------------------------------------------------

def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def reduce_sum(x, axis=None, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)
    axes = _norm_axes(axis, x.ndim)
    out = x.data.sum(axis=axes, keepdims=keepdims)

    def bwd(g):
        if not keepdims:
            g = np.expand_dims(g, axes) if axes else g
        return (np.broadcast_to(g, x.shape).copy(),)

    return _result(out, (x,), bwd)


def reduce_mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)
    axes = _norm_axes(axis, x.ndim)
    count = 1
    for a in axes:
        count *= x.shape[a]
    out = x.data.mean(axis=axes, keepdims=keepdims)

    def bwd(g):
        if not keepdims:
            g = np.expand_dims(g, axes) if axes else g
        return (np.broadcast_to(g, x.shape) / count,)

    return _result(out, (x,), bwd)


def reshape(x, shape) -> Tensor:
    x = _as_tensor(x)
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeMismatch(f"cannot reshape {x.shape} to {shape}") from None

    def bwd(g):
        return (g.reshape(x.shape),)

    return _result(out, (x,), bwd)


def transpose(x, axes) -> Tensor:
    x = _as_tensor(x)
    axes = tuple(axes)
    inv = np.argsort(axes)

    def bwd(g):
        return (np.transpose(g, inv),)

    return _result(np.ascontiguousarray(np.transpose(x.data, axes)), (x,), bwd)


def concat(tensors, axis: int) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    ref = tensors[0]
    for t in tensors[1:]:
        if t.ndim != ref.ndim or any(
            i != axis % ref.ndim and t.shape[i] != ref.shape[i] for i in range(ref.ndim)
        ):
            raise ShapeMismatch("concat operands differ off the concat axis")
    axis = axis % ref.ndim
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, splits, axis=axis))

    return _result(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), bwd)


def narrow(x, axis: int, start: int, length: int) -> Tensor:
    """Slice `length` entries from `start` along `axis`."""
    x = _as_tensor(x)
    axis = axis % x.ndim
    if start < 0 or start + length > x.shape[axis]:
        raise ShapeMismatch(
            f"narrow [{start}:{start + length}) exceeds axis {axis} of {x.shape}"
        )
    idx = tuple(
        slice(start, start + length) if i == axis else slice(None) for i in range(x.ndim)
    )

    def bwd(g):
        gx = np.zeros_like(x.data)
        gx[idx] = g
        return (gx,)

    return _result(np.ascontiguousarray(x.data[idx]), (x,), bwd)


def chunk(x, n: int, axis: int):
    x = _as_tensor(x)
    axis = axis % x.ndim
    if x.shape[axis] % n:
        raise ShapeMismatch(f"axis {axis} of {x.shape} not divisible into {n} chunks")
    step = x.shape[axis] // n
    return [narrow(x, axis, i * step, step) for i in range(n)]


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeMismatch(f"matmul of {a.shape} and {b.shape}") from None

    def bwd(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _result(out, (a, b), bwd)


# ---------------------------------------------------------------------------
# Softmax, layer norm, pooling
# ---------------------------------------------------------------------------

def softmax(x, axis: int = -1) -> Tensor:
    """Max-subtracted stable softmax along `axis`."""
    x = _as_tensor(x)
    axis = axis % x.ndim
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        inner = (g * s).sum(axis=axis, keepdims=True)
        return (s * (g - inner),)

    return _result(s, (x,), bwd)


def layer_norm(x, gain, offset, eps: float = 1e-6) -> Tensor:
    """Normalize over the channel axis (axis 1) per spatial position.

    Zero mean, unit population variance before the affine transform;
    `eps` is added to the variance.
    """
    x, gain, offset = _as_tensor(x), _as_tensor(gain), _as_tensor(offset)
    if x.ndim < 2:
        raise ShapeMismatch("layer_norm expects at least 2 dimensions")
    c = x.shape[1]
    gshape = (1, c) + (1,) * (x.ndim - 2)
    if gain.size != c or offset.size != c:
        raise ShapeMismatch("gain/offset must have one value per channel")
    gdata = gain.data.reshape(gshape)
    odata = offset.data.reshape(gshape)
    mu = x.data.mean(axis=1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv

    def bwd(g):
        reduce_axes = (0,) + tuple(range(2, x.ndim))
        g_gain = (g * xhat).sum(axis=reduce_axes).reshape(gain.shape)
        g_offset = g.sum(axis=reduce_axes).reshape(offset.shape)
        gh = g * gdata
        gx = inv * (
            gh
            - gh.mean(axis=1, keepdims=True)
            - xhat * (gh * xhat).mean(axis=1, keepdims=True)
        )
        return gx, g_gain, g_offset

    return _result(xhat * gdata + odata, (x, gain, offset), bwd)


def pool(x, mode: str, over: str) -> Tensor:
    """Global pooling on NCHW tensors.

    over="spatial" collapses H,W to 1x1; over="channel" collapses C to 1.
    """
    x = _as_tensor(x)
    if x.ndim != 4:
        raise ShapeMismatch(f"pool expects NCHW, got {x.shape}")
    if mode not in ("avg", "max") or over not in ("spatial", "channel"):
        raise ValueError(f"unknown pool mode={mode!r} over={over!r}")
    n, c, h, w = x.shape
    if over == "spatial":
        if mode == "avg":
            out = x.data.mean(axis=(2, 3), keepdims=True)

            def bwd(g):
                return (np.broadcast_to(g / (h * w), x.shape).copy(),)

        else:
            flat = x.data.reshape(n, c, h * w)
            am = flat.argmax(axis=2)
            out = np.take_along_axis(flat, am[:, :, None], axis=2).reshape(n, c, 1, 1)

            def bwd(g):
                gx = np.zeros((n, c, h * w), dtype=x.data.dtype)
                np.put_along_axis(gx, am[:, :, None], g.reshape(n, c, 1), axis=2)
                return (gx.reshape(x.shape),)

    else:
        if mode == "avg":
            out = x.data.mean(axis=1, keepdims=True)

            def bwd(g):
                return (np.broadcast_to(g / c, x.shape).copy(),)

        else:
            am = x.data.argmax(axis=1)
            out = np.take_along_axis(x.data, am[:, None], axis=1)

            def bwd(g):
                gx = np.zeros_like(x.data)
                np.put_along_axis(gx, am[:, None], g, axis=1)
                return (gx,)

    return _result(out, (x,), bwd)


# ---------------------------------------------------------------------------
# Padding and convolution
# ---------------------------------------------------------------------------

def _reflect_indices(n: int, lo: int, hi: int) -> np.ndarray:
    """Source index for each padded position under edge-excluding reflection."""
    if n == 1:
        return np.zeros(lo + 1 + hi, dtype=np.intp)
    j = np.arange(-lo, n + hi)
    period = 2 * n - 2
    m = np.mod(j, period)
    return np.where(m < n, m, period - m).astype(np.intp)


def pad2d(x, pads, mode: str = "zero") -> Tensor:
    """Pad the trailing two axes. ``pads`` is (top, bottom, left, right)."""
    x = _as_tensor(x)
    if x.ndim < 2:
        raise ShapeMismatch("pad2d expects at least 2 dimensions")
    top, bottom, left, right = pads
    h, w = x.shape[-2], x.shape[-1]
    if mode == "zero":
        spec = [(0, 0)] * (x.ndim - 2) + [(top, bottom), (left, right)]
        out = np.pad(x.data, spec)

        def bwd(g):
            sl = (Ellipsis, slice(top, top + h), slice(left, left + w))
            return (np.ascontiguousarray(g[sl]),)

        return _result(out, (x,), bwd)
    if mode != "reflect":
        raise ValueError(f"unknown pad mode {mode!r}")
    if max(top, bottom) >= h or max(left, right) >= w:
        raise ShapeMismatch("reflect padding must be smaller than the extent")
    ih = _reflect_indices(h, top, bottom)
    iw = _reflect_indices(w, left, right)
    out = x.data[..., ih[:, None], iw[None, :]]

    def bwd(g):
        part = np.zeros(x.shape[:-2] + (h, g.shape[-1]), dtype=g.dtype)
        np.add.at(np.moveaxis(part, -2, 0), ih, np.moveaxis(g, -2, 0))
        gx = np.zeros_like(x.data)
        np.add.at(np.moveaxis(gx, -1, 0), iw, np.moveaxis(part, -1, 0))
        return (gx,)

    return _result(out, (x,), bwd)


def conv2d(x, w, bias=None, stride: int = 1, padding=0, pad_mode: str = "zero",
           groups: int = 1) -> Tensor:
    """2D cross-correlation on NCHW input with OIKK weights.

    ``padding`` is an integer or "same" (stride 1, odd kernels).  Depth-wise
    convolution is groups == channels.
    """
    x, w = _as_tensor(x), _as_tensor(w)
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeMismatch(f"conv2d expects 4D input/weight, got {x.shape}/{w.shape}")
    n, c, h, wdt = x.shape
    o, cg, kh, kw = w.shape
    if groups < 1 or c % groups or o % groups:
        raise InvalidGroups(f"groups={groups} incompatible with C={c}, O={o}")
    if cg != c // groups:
        raise ShapeMismatch(f"weight expects {cg * groups} input channels, got {c}")
    if padding == "same":
        if stride != 1:
            raise ShapeMismatch("'same' padding requires stride 1")
        ph, pw = (kh - 1) // 2, (kw - 1) // 2
    else:
        ph = pw = int(padding)
    if pad_mode == "reflect":
        if ph or pw:
            x = pad2d(x, (ph, ph, pw, pw), mode="reflect")
        return conv2d(x, w, bias=bias, stride=stride, padding=0, groups=groups)
    if pad_mode != "zero":
        raise ValueError(f"unknown pad mode {pad_mode!r}")

    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if (ph or pw) else x.data
    hp, wp = xp.shape[2], xp.shape[3]
    if hp < kh or wp < kw:
        raise ShapeMismatch(f"kernel {kh}x{kw} larger than padded input {hp}x{wp}")
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    og = o // groups

    if kh == 1 and kw == 1 and stride == 1 and groups == 1:
        return _conv2d_pointwise(x, w, bias)
    if groups == c and o == c and stride == 1:
        return _conv2d_depthwise(x, w, bias, xp, ph, pw, ho, wo)

    def _cols(arr):
        # (N, C, HP, WP) -> (N, g, HoWo, Cg*K*K)
        win = sliding_window_view(arr, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
        win = win.reshape(n, groups, cg, ho, wo, kh, kw)
        return win.transpose(0, 1, 3, 4, 2, 5, 6).reshape(n, groups, ho * wo, cg * kh * kw)

    wg = w.data.reshape(groups, og, cg * kh * kw)
    out = np.matmul(_cols(xp), wg.transpose(0, 2, 1)[None])  # (N, g, HoWo, Og)
    out = out.transpose(0, 1, 3, 2).reshape(n, o, ho, wo)

    has_bias = bias is not None
    if has_bias:
        bias = _as_tensor(bias)
        if bias.size != o:
            raise ShapeMismatch(f"bias size {bias.size} != out channels {o}")
        out = out + bias.data.reshape(1, o, 1, 1)

    def bwd(g):
        gmat = g.reshape(n, groups, og, ho * wo)
        cols = _cols(xp)
        gw = np.matmul(gmat, cols).sum(axis=0).reshape(w.shape)
        gcols = np.matmul(gmat.transpose(0, 1, 3, 2), wg[None])  # (N, g, HoWo, CgKK)
        gwin = gcols.reshape(n, groups, ho, wo, cg, kh, kw).transpose(0, 1, 4, 2, 3, 5, 6)
        gwin = gwin.reshape(n, c, ho, wo, kh, kw)
        gxp = np.zeros((n, c, hp, wp), dtype=g.dtype)
        for ki in range(kh):
            for kj in range(kw):
                gxp[:, :, ki:ki + stride * ho:stride, kj:kj + stride * wo:stride] += \
                    gwin[:, :, :, :, ki, kj]
        gx = gxp[:, :, ph:ph + h, pw:pw + wdt] if (ph or pw) else gxp
        grads = [np.ascontiguousarray(gx), gw]
        if has_bias:
            grads.append(g.sum(axis=(0, 2, 3)).reshape(bias.shape))
        return tuple(grads)

    inputs = (x, w, bias) if has_bias else (x, w)
    return _result(out, inputs, bwd)


def _conv2d_pointwise(x: Tensor, w: Tensor, bias) -> Tensor:
    """1x1, stride 1, ungrouped convolution as a channel matmul."""
    n, c, h, wd = x.shape
    o = w.shape[0]
    w2 = w.data.reshape(o, c)
    out = np.matmul(w2, x.data.reshape(n, c, h * wd)).reshape(n, o, h, wd)
    has_bias = bias is not None
    if has_bias:
        bias = _as_tensor(bias)
        if bias.size != o:
            raise ShapeMismatch(f"bias size {bias.size} != out channels {o}")
        out = out + bias.data.reshape(1, o, 1, 1)

    def bwd(g):
        gm = g.reshape(n, o, h * wd)
        gx = np.matmul(w2.T, gm).reshape(x.shape)
        gw = np.matmul(gm, x.data.reshape(n, c, h * wd).transpose(0, 2, 1)).sum(axis=0)
        grads = [gx, gw.reshape(w.shape)]
        if has_bias:
            grads.append(g.sum(axis=(0, 2, 3)).reshape(bias.shape))
        return tuple(grads)

    inputs = (x, w, bias) if has_bias else (x, w)
    return _result(out, inputs, bwd)


def _conv2d_depthwise(x: Tensor, w: Tensor, bias, xp, ph, pw, ho, wo) -> Tensor:
    """groups == channels, stride 1: kernel taps as shifted multiply-adds."""
    n, c, h, wd = x.shape
    kh, kw = w.shape[2], w.shape[3]
    out = np.zeros((n, c, ho, wo), dtype=x.data.dtype)
    for ki in range(kh):
        for kj in range(kw):
            out += w.data[:, 0, ki, kj].reshape(1, c, 1, 1) * xp[:, :, ki:ki + ho, kj:kj + wo]
    has_bias = bias is not None
    if has_bias:
        bias = _as_tensor(bias)
        if bias.size != c:
            raise ShapeMismatch(f"bias size {bias.size} != out channels {c}")
        out = out + bias.data.reshape(1, c, 1, 1)

    def bwd(g):
        gw = np.empty_like(w.data)
        gxp = np.zeros_like(xp)
        for ki in range(kh):
            for kj in range(kw):
                window = xp[:, :, ki:ki + ho, kj:kj + wo]
                gw[:, 0, ki, kj] = np.einsum("nchw,nchw->c", g, window)
                gxp[:, :, ki:ki + ho, kj:kj + wo] += w.data[:, 0, ki, kj].reshape(1, c, 1, 1) * g
        gx = gxp[:, :, ph:ph + h, pw:pw + wd] if (ph or pw) else gxp
        grads = [np.ascontiguousarray(gx), gw]
        if has_bias:
            grads.append(g.sum(axis=(0, 2, 3)).reshape(bias.shape))
        return tuple(grads)

    inputs = (x, w, bias) if has_bias else (x, w)
    return _result(out, inputs, bwd)


# ---------------------------------------------------------------------------
# Pixel shuffling (built from reshape/transpose, so differentiable for free)
# ---------------------------------------------------------------------------

def pixel_unshuffle(x, r: int = 2) -> Tensor:
    """(N, C, H, W) -> (N, C*r*r, H/r, W/r)."""
    x = _as_tensor(x)
    n, c, h, w = x.shape
    if h % r or w % r:
        raise ShapeMismatch(f"extents {h}x{w} not divisible by {r}")
    y = reshape(x, (n, c, h // r, r, w // r, r))
    y = transpose(y, (0, 1, 3, 5, 2, 4))
    return reshape(y, (n, c * r * r, h // r, w // r))


def pixel_shuffle(x, r: int = 2) -> Tensor:
    """(N, C*r*r, H, W) -> (N, C, H*r, W*r)."""
    x = _as_tensor(x)
    n, c, h, w = x.shape
    if c % (r * r):
        raise ShapeMismatch(f"channels {c} not divisible by {r * r}")
    co = c // (r * r)
    y = reshape(x, (n, co, r, r, h, w))
    y = transpose(y, (0, 1, 4, 2, 5, 3))
    return reshape(y, (n, co, h * r, w * r))


def l2_normalize(x, axis: int = -1, eps: float = 1e-12) -> Tensor:
    """x / sqrt(sum(x^2) + eps) along `axis`; maps zero vectors to zero."""
    sq = reduce_sum(mul(x, x), axis=axis, keepdims=True)
    return div(x, sqrt(add(sq, eps)))


# ---------------------------------------------------------------------------
# Verification helpers and plain-array utilities
# ---------------------------------------------------------------------------

def finite_diff_check(f, x, h: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    `f` maps a tensor to a scalar tensor.  Returns
    max over coordinates of |analytic - central| / (|analytic| + 1e-8).
    Runs in float64 regardless of the input dtype.
    """
    base = x.data if isinstance(x, Tensor) else np.asarray(x)
    probe = Tensor(base.astype(np.float64, copy=True), requires_grad=True)
    get_tape().clear()
    loss = f(probe)
    backward(loss)
    analytic = probe.grad.copy()
    numeric = np.zeros_like(analytic)
    flat = probe.data.reshape(-1)
    nflat = numeric.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = f(probe).item()
            flat[i] = orig - h
            fm = f(probe).item()
            flat[i] = orig
            nflat[i] = (fp - fm) / (2.0 * h)
    rel = np.abs(analytic - numeric) / (np.abs(analytic) + 1e-8)
    return float(rel.max())


def resize_bilinear(arr: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize of the trailing two axes (half-pixel centers).

    Plain-array utility: used for guidance-image pyramids and spectrum
    rescaling, never differentiated through.
    """
    h, w = arr.shape[-2], arr.shape[-1]
    if (h, w) == (out_h, out_w):
        return arr.copy()

    def _coords(n_in, n_out):
        src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        src = np.clip(src, 0.0, n_in - 1.0)
        i0 = np.floor(src).astype(np.intp)
        i1 = np.minimum(i0 + 1, n_in - 1)
        frac = src - i0
        return i0, i1, frac

    r0, r1, rf = _coords(h, out_h)
    c0, c1, cf = _coords(w, out_w)
    rf = rf.reshape(-1, 1)
    cf = cf.reshape(1, -1)
    top = arr[..., r0[:, None], c0[None, :]] * (1 - cf) + arr[..., r0[:, None], c1[None, :]] * cf
    bot = arr[..., r1[:, None], c0[None, :]] * (1 - cf) + arr[..., r1[:, None], c1[None, :]] * cf
    return top * (1 - rf) + bot * rf
