"""Rank-4 tensors and tape-based reverse-mode differentiation.

Every value is a :class:`Tensor4` of shape ``(n, c, h, w)``; scalars are
``(1, 1, 1, 1)``.  Primitives evaluated while a :class:`Tape` is active are
recorded on it when at least one input requires a gradient::

    with Tape() as tape:
        loss = mean(square(conv2d(x, w, b, padding=1)))
    grads = backward(tape, loss)
    grads[w]  # ndarray shaped like w
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from . import kernels


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible with an operation."""


class Tensor4:
    """Dense ``(n, c, h, w)`` array of 32- or 64-bit floats."""

    __slots__ = ("data", "requires_grad", "name")
    __array_priority__ = 100  # make ndarray <op> Tensor4 defer to us

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data)
        if arr.ndim != 4:
            raise ShapeError(f"Tensor4 needs 4 dimensions, got shape {arr.shape}")
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        self.name = name

    @classmethod
    def scalar(cls, value: float, dtype=np.float64) -> "Tensor4":
        return cls(np.full((1, 1, 1, 1), value, dtype=dtype))

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.data.shape  # type: ignore[return-value]

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor4(shape={self.shape}, dtype={self.dtype}{label})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor4):
            raise TypeError("division by a tensor is not supported")
        return scale(self, 1.0 / float(other))

    def __neg__(self):
        return scale(self, -1.0)


# --------------------------------------------------------------------------
# tape

class _Record:
    __slots__ = ("out", "inputs", "vjp")

    def __init__(self, out, inputs, vjp):
        self.out = out
        self.inputs = inputs
        self.vjp = vjp


_active: list["Tape"] = []


class Tape:
    """Ordered log of primitive applications for one forward pass.

    Single-writer: do not share a tape between threads.
    """

    def __init__(self):
        self.records: list[_Record] = []

    def __enter__(self) -> "Tape":
        _active.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _active.remove(self)

    def __len__(self) -> int:
        return len(self.records)


def _emit(out_data: np.ndarray, inputs: Sequence[Tensor4], vjp: Callable) -> Tensor4:
    out = Tensor4(out_data)
    if _active and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        _active[-1].records.append(_Record(out, tuple(inputs), vjp))
    return out


def backward(tape: Tape, loss: Tensor4) -> dict[Tensor4, np.ndarray]:
    """Gradients of a scalar ``loss`` for every grad-requiring leaf on ``tape``.

    The returned dict is keyed by tensor identity.
    """
    if loss.shape != (1, 1, 1, 1):
        raise ShapeError(f"loss must be a (1, 1, 1, 1) scalar, got {loss.shape}")
    buffers: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    produced = set()
    leaves: dict[int, Tensor4] = {}
    for rec in tape.records:
        produced.add(id(rec.out))
    for rec in reversed(tape.records):
        g = buffers.pop(id(rec.out), None)
        if g is None:
            continue
        for inp, gi in zip(rec.inputs, rec.vjp(g)):
            if gi is None or not inp.requires_grad:
                continue
            key = id(inp)
            if key not in produced:
                leaves[key] = inp
            prev = buffers.get(key)
            buffers[key] = gi if prev is None else prev + gi
    if id(loss) not in produced and loss.requires_grad:
        leaves[id(loss)] = loss
    return {t: buffers.get(k, np.zeros_like(t.data)) for k, t in leaves.items()}


# --------------------------------------------------------------------------
# elementwise and reductions

def _as_tensor(x, like: Tensor4 | None = None) -> Tensor4:
    if isinstance(x, Tensor4):
        return x
    dtype = like.dtype if like is not None else np.float64
    arr = np.asarray(x, dtype=dtype)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1, 1, 1)
    return Tensor4(arr)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    return g.sum(axis=axes, keepdims=True)


def _broadcast_shape(a: Tensor4, b: Tensor4, op: str) -> None:
    for da, db in zip(a.shape, b.shape):
        if da != db and da != 1 and db != 1:
            raise ShapeError(f"{op}: cannot broadcast {a.shape} with {b.shape}")


def add(a, b) -> Tensor4:
    a = _as_tensor(a, b if isinstance(b, Tensor4) else None)
    b = _as_tensor(b, a)
    _broadcast_shape(a, b, "add")
    sa, sb = a.shape, b.shape
    return _emit(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor4:
    a = _as_tensor(a, b if isinstance(b, Tensor4) else None)
    b = _as_tensor(b, a)
    _broadcast_shape(a, b, "sub")
    sa, sb = a.shape, b.shape
    return _emit(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a, b) -> Tensor4:
    a = _as_tensor(a, b if isinstance(b, Tensor4) else None)
    b = _as_tensor(b, a)
    _broadcast_shape(a, b, "mul")
    ad, bd = a.data, b.data
    return _emit(
        ad * bd,
        (a, b),
        lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)),
    )


def scale(x: Tensor4, factor: float) -> Tensor4:
    f = x.dtype.type(factor)
    return _emit(x.data * f, (x,), lambda g: (g * f,))


def square(x: Tensor4) -> Tensor4:
    xd = x.data
    return _emit(xd * xd, (x,), lambda g: (2 * g * xd,))


def absolute(x: Tensor4) -> Tensor4:
    xd = x.data
    return _emit(np.abs(xd), (x,), lambda g: (g * np.sign(xd),))


def sum_all(x: Tensor4) -> Tensor4:
    shape = x.shape
    out = x.data.sum(dtype=x.dtype).reshape(1, 1, 1, 1)
    return _emit(out, (x,), lambda g: (np.broadcast_to(g, shape).copy(),))


def mean(x: Tensor4) -> Tensor4:
    return scale(sum_all(x), 1.0 / x.data.size)


# --------------------------------------------------------------------------
# activations

def relu(x: Tensor4) -> Tensor4:
    xd = x.data
    return _emit(np.maximum(xd, 0), (x,), lambda g: (g * (xd > 0),))


def sigmoid(x: Tensor4) -> Tensor4:
    half = x.dtype.type(0.5)
    y = half * (np.tanh(half * x.data) + 1)
    return _emit(y, (x,), lambda g: (g * y * (1 - y),))


def channel_softmax(x: Tensor4) -> Tensor4:
    """Softmax over the channel axis independently at every pixel."""
    if x.shape[1] < 2:
        raise ShapeError(f"channel_softmax needs at least 2 channels, got shape {x.shape}")
    e = np.exp(x.data - x.data.max(axis=1, keepdims=True))
    y = e / e.sum(axis=1, keepdims=True)

    def vjp(g):
        return (y * (g - (g * y).sum(axis=1, keepdims=True)),)

    return _emit(y, (x,), vjp)


# --------------------------------------------------------------------------
# channel plumbing

def concat_channels(xs: Sequence[Tensor4]) -> Tensor4:
    xs = list(xs)
    if not xs:
        raise ShapeError("concat_channels needs at least one tensor")
    n, _, h, w = xs[0].shape
    for i, t in enumerate(xs[1:], start=1):
        if (t.shape[0], t.shape[2], t.shape[3]) != (n, h, w):
            raise ShapeError(
                f"concat_channels: input {i} has shape {t.shape}, expected (n, h, w) = {(n, h, w)}"
            )
    if len(xs) == 1:
        return xs[0]
    bounds = np.cumsum([0] + [t.shape[1] for t in xs])
    out = np.concatenate([t.data for t in xs], axis=1)
    return _emit(
        out,
        xs,
        lambda g: tuple(g[:, bounds[i] : bounds[i + 1]] for i in range(len(xs))),
    )


def slice_channels(x: Tensor4, start: int, stop: int) -> Tensor4:
    if not 0 <= start < stop <= x.shape[1]:
        raise ShapeError(f"slice_channels: bad range [{start}, {stop}) for shape {x.shape}")
    shape = x.shape

    def vjp(g):
        full = np.zeros(shape, dtype=g.dtype)
        full[:, start:stop] = g
        return (full,)

    return _emit(x.data[:, start:stop].copy(), (x,), vjp)


def repeat_channels(x: Tensor4, times: int) -> Tensor4:
    return concat_channels([x] * times)


# --------------------------------------------------------------------------
# convolution, pooling, resampling

def conv2d(
    x: Tensor4,
    weight: Tensor4,
    bias: Tensor4 | None = None,
    stride: int = 1,
    padding: int = 0,
) -> Tensor4:
    """2-D cross-correlation with zero padding.

    ``weight`` is ``(out_c, in_c, kh, kw)`` with odd kernel sizes; ``bias``
    is stored as ``(1, out_c, 1, 1)``.
    """
    n, c, h, w = x.shape
    oc, ic, kh, kw = weight.shape
    if c != ic:
        raise ShapeError(f"conv2d: input shape {x.shape} does not match weight shape {weight.shape}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(f"conv2d: kernel must have odd sizes, got weight shape {weight.shape}")
    if stride < 1 or padding < 0:
        raise ValueError(f"conv2d: need stride >= 1 and padding >= 0, got {stride}, {padding}")
    if bias is not None and bias.shape != (1, oc, 1, 1):
        raise ShapeError(f"conv2d: bias shape {bias.shape} does not match weight shape {weight.shape}")
    hp, wp = h + 2 * padding, w + 2 * padding
    oh = (hp - kh) // stride + 1
    ow = (wp - kw) // stride + 1
    if oh < 1 or ow < 1:
        raise ShapeError(f"conv2d: input shape {x.shape} too small for weight shape {weight.shape}")

    pointwise = kh == 1 and kw == 1 and stride == 1 and padding == 0
    if pointwise:
        cols = x.data.reshape(n, c, h * w)
    else:
        xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
        cols = kernels.im2col(xp, kh, kw, stride, oh, ow)
    wm = weight.data.reshape(oc, -1)
    out = np.matmul(wm, cols)
    if bias is not None:
        out += bias.data.reshape(1, oc, 1)
    out = out.reshape(n, oc, oh, ow)

    def vjp(g):
        gm = g.reshape(n, oc, oh * ow)
        gw = np.matmul(gm, cols.transpose(0, 2, 1)).sum(axis=0).reshape(weight.shape)
        gcols = np.matmul(wm.T, gm)
        if pointwise:
            gx = gcols.reshape(n, c, h, w)
        else:
            gxp = kernels.col2im(gcols, c, hp, wp, kh, kw, stride, oh, ow)
            gx = gxp[:, :, padding : padding + h, padding : padding + w]
        gb = gm.sum(axis=(0, 2)).reshape(1, oc, 1, 1) if bias is not None else None
        return (gx, gw, gb)

    inputs = (x, weight, bias if bias is not None else Tensor4(np.zeros((1, oc, 1, 1), x.dtype)))
    return _emit(out, inputs, vjp)


def avg_pool(x: Tensor4, k: int) -> Tensor4:
    """Non-overlapping ``k x k`` mean pooling; spatial dims must divide by ``k``."""
    n, c, h, w = x.shape
    if k < 1:
        raise ValueError(f"avg_pool: k must be >= 1, got {k}")
    if h % k or w % k:
        raise ShapeError(
            f"avg_pool: spatial dims {h}x{w} are not divisible by {k}; crop the input first"
        )
    out = x.data.reshape(n, c, h // k, k, w // k, k).mean(axis=(3, 5))
    inv = x.dtype.type(1.0 / (k * k))

    def vjp(g):
        return (np.repeat(np.repeat(g, k, axis=2), k, axis=3) * inv,)

    return _emit(out, (x,), vjp)


def global_avg_pool(x: Tensor4) -> Tensor4:
    n, c, h, w = x.shape
    out = x.data.mean(axis=(2, 3), keepdims=True)
    inv = x.dtype.type(1.0 / (h * w))
    return _emit(out, (x,), lambda g: (np.broadcast_to(g * inv, x.shape).copy(),))


def _bilinear_matrix(size: int, factor: int, dtype) -> np.ndarray:
    # half-pixel centres (align_corners=False); sources left of pixel 0 clamp to it
    out = size * factor
    src = (np.arange(out) + 0.5) / factor - 0.5
    src = np.clip(src, 0, None)
    i0 = np.floor(src).astype(int)
    i0 = np.minimum(i0, size - 1)
    i1 = np.minimum(i0 + 1, size - 1)
    frac = src - i0
    m = np.zeros((out, size), dtype=np.float64)
    rows = np.arange(out)
    np.add.at(m, (rows, i0), 1 - frac)
    np.add.at(m, (rows, i1), frac)
    return m.astype(dtype)


def upsample(x: Tensor4, factor: int, mode: str = "nearest") -> Tensor4:
    if factor < 1:
        raise ValueError(f"upsample: factor must be >= 1, got {factor}")
    if mode not in ("nearest", "bilinear"):
        raise ValueError(f"upsample: unknown mode {mode!r}")
    if factor == 1:
        return x
    n, c, h, w = x.shape
    if mode == "nearest":
        out = np.repeat(np.repeat(x.data, factor, axis=2), factor, axis=3)

        def vjp(g):
            return (g.reshape(n, c, h, factor, w, factor).sum(axis=(3, 5)),)

        return _emit(out, (x,), vjp)

    mh = _bilinear_matrix(h, factor, x.dtype)
    mw = _bilinear_matrix(w, factor, x.dtype)
    out = np.matmul(np.matmul(mh, x.data), mw.T)

    def vjp(g):
        return (np.matmul(np.matmul(mh.T, g), mw),)

    return _emit(out, (x,), vjp)
