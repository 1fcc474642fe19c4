"""Forward kernels and backward rules for every layer kind.

All functions take ``Tensor`` (or array-like) inputs, never mutate them, and
record a tape node when any input is tracked.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import LabelError, ParameterError, ShapeError
from .rng import Rng
from .tensor import Tensor, as_tensor, check_finite, record

CE_CLAMP = 1e-7


def _needs(*xs):
    return [x.tape is not None for x in xs]


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"add: shapes differ {a.shape} vs {b.shape}")
    return record("add", (a, b), a.data + b.data, lambda g: (g, g))


def multiply(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"multiply: shapes differ {a.shape} vs {b.shape}")
    x, y = a.data, b.data
    return record("mul", (a, b), x * y, lambda g: (g * y, g * x))


def reduce_sum(x) -> Tensor:
    x = as_tensor(x)
    shape, dtype = x.shape, x.dtype
    return record("sum", (x,), np.asarray(x.data.sum(), dtype=dtype),
                  lambda g: (np.broadcast_to(g, shape).astype(dtype),))


def relu(x) -> Tensor:
    x = as_tensor(x)
    check_finite(x.data, "relu input")
    pos = x.data > 0
    return record("relu", (x,), np.where(pos, x.data, 0).astype(x.dtype), lambda g: (g * pos,))


def _sigmoid(v: np.ndarray) -> np.ndarray:
    # branch on sign so exp never overflows
    e = np.exp(-np.abs(v))
    return np.where(v >= 0, 1 / (1 + e), e / (1 + e)).astype(v.dtype)


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    check_finite(x.data, "sigmoid input")
    s = _sigmoid(x.data)
    return record("sigmoid", (x,), s, lambda g: (g * s * (1 - s),))


def pointwise_activation(x, kind: str) -> Tensor:
    if kind == "relu":
        return relu(x)
    if kind == "sigmoid":
        return sigmoid(x)
    raise ParameterError(f"unknown activation {kind!r}")


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    if not -x.data.ndim <= axis < x.data.ndim:
        raise ShapeError(f"softmax: axis {axis} invalid for shape {x.shape}")
    check_finite(x.data, "softmax input")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return record("softmax", (x,), s, backward)


def activation(x, kind) -> Tensor:
    if kind is None:
        return as_tensor(x)
    if kind == "softmax":
        return softmax(x, axis=-1)
    return pointwise_activation(x, kind)


def same_padding(size: int, k: int, stride: int) -> tuple:
    """(before, after, out) for "same" padding; the odd extra goes after."""
    out = -(-size // stride)
    total = max((out - 1) * stride + k - size, 0)
    return total // 2, total - total // 2, out


def conv_output_size(size: int, k: int, stride: int, padding: str) -> int:
    if padding == "same":
        return same_padding(size, k, stride)[2]
    if padding == "valid":
        return (size - k) // stride + 1 if size >= k else 0
    raise ParameterError(f"padding must be 'same' or 'valid', got {padding!r}")


def conv2d(x, w, b, padding: str = "same", stride: int = 1) -> Tensor:
    """Cross-correlation of NCHW input with FCkk filters plus per-filter bias."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ShapeError(f"conv2d: expected 4-d input and kernel, got {x.shape} and {w.shape}")
    if stride < 1:
        raise ParameterError(f"conv2d: stride must be positive, got {stride}")
    n, c, h, wd = x.shape
    f, cw, kh, kw = w.shape
    if c != cw:
        raise ShapeError(f"conv2d: input {x.shape} has {c} channels, kernel {w.shape} expects {cw}")
    if b.shape != (f,):
        raise ShapeError(f"conv2d: bias {b.shape} does not match kernel {w.shape}")
    if padding == "same":
        top, bottom, ho = same_padding(h, kh, stride)
        left, right, wo = same_padding(wd, kw, stride)
    else:
        top = bottom = left = right = 0
        ho = conv_output_size(h, kh, stride, padding)
        wo = conv_output_size(wd, kw, stride, padding)
    if ho <= 0 or wo <= 0:
        raise ShapeError(f"conv2d: non-positive output extent for input {x.shape} and kernel {w.shape}")

    xp = np.pad(x.data, ((0, 0), (0, 0), (top, bottom), (left, right)))
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    # win: (N, C, Ho, Wo, kh, kw)
    out = np.tensordot(win, w.data, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    out = out + b.data.reshape(1, f, 1, 1)
    need_x, need_w, need_b = _needs(x, w, b)
    wdata = w.data

    def backward(g):
        dx = dw = db = None
        if need_b:
            db = g.sum(axis=(0, 2, 3))
        if need_w:
            dw = np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3]))
        if need_x:
            dcol = np.tensordot(g, wdata, axes=([1], [0]))  # (N, Ho, Wo, C, kh, kw)
            dxp = np.zeros(xp.shape, dtype=g.dtype)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += \
                        dcol[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            dx = dxp[:, :, top:top + h, left:left + wd]
        return dx, dw, db

    return record("conv2d", (x, w, b), np.ascontiguousarray(out, dtype=x.dtype), backward)


def maxpool2d(x) -> Tensor:
    """2x2 max pooling, stride 2; ties resolve to the first element in row-major order."""
    x = as_tensor(x)
    if x.data.ndim != 4:
        raise ShapeError(f"maxpool2d: expected NCHW input, got {x.shape}")
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"maxpool2d: spatial extents must be even, got {x.shape}")
    ho, wo = h // 2, w // 2
    win = x.data.reshape(n, c, ho, 2, wo, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho, wo, 4)
    arg = win.argmax(axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]

    def backward(g):
        d = np.zeros((n, c, ho, wo, 4), dtype=g.dtype)
        np.put_along_axis(d, arg[..., None], g[..., None], axis=-1)
        return (d.reshape(n, c, ho, wo, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w),)

    return record("maxpool2d", (x,), out, backward)


def affine(x, w, b) -> Tensor:
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if x.data.ndim != 2 or w.data.ndim != 2 or x.shape[1] != w.shape[0] or b.shape != (w.shape[1],):
        raise ShapeError(f"affine: incompatible shapes x{x.shape} w{w.shape} b{b.shape}")
    xd, wd = x.data, w.data
    need_x, need_w, need_b = _needs(x, w, b)

    def backward(g):
        return (g @ wd.T if need_x else None,
                xd.T @ g if need_w else None,
                g.sum(axis=0) if need_b else None)

    return record("affine", (x, w, b), xd @ wd + b.data, backward)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    src = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"reshape: cannot reshape {src} to {tuple(shape)}") from exc
    return record("reshape", (x,), out, lambda g: (g.reshape(src),))


def flatten(x) -> Tensor:
    x = as_tensor(x)
    if x.data.ndim < 2:
        raise ShapeError(f"flatten: need rank >= 2, got {x.shape}")
    if x.data.ndim == 2:
        return x
    return reshape(x, (x.shape[0], -1))


def global_average_pool(x) -> Tensor:
    x = as_tensor(x)
    if x.data.ndim != 4 or x.shape[2] * x.shape[3] < 1:
        raise ShapeError(f"global_average_pool: expected NCHW with H*W >= 1, got {x.shape}")
    n, c, h, w = x.shape
    area = h * w

    def backward(g):
        return (np.broadcast_to((g / area)[:, :, None, None], (n, c, h, w)).astype(g.dtype),)

    return record("gap", (x,), x.data.mean(axis=(2, 3)), backward)


def dropout_mask(shape, rate: float, rng: Rng, dtype=np.float32) -> np.ndarray:
    """Inverted-dropout multiplier: 0 with probability ``rate``, else 1/(1-rate)."""
    keep = rng.uniform(shape) >= rate
    return (keep / (1.0 - rate)).astype(dtype)


def dropout(x, rate: float, mode: str = "train", rng: Rng | None = None, mask=None) -> Tensor:
    x = as_tensor(x)
    if not 0.0 <= rate < 1.0:
        raise ParameterError(f"dropout rate must lie in [0, 1), got {rate}")
    if mode not in ("train", "infer"):
        raise ParameterError(f"dropout mode must be 'train' or 'infer', got {mode!r}")
    if mode == "infer" or rate == 0.0:
        return x
    if mask is None:
        if rng is None:
            raise ParameterError("dropout in train mode needs an rng or an explicit mask")
        mask = dropout_mask(x.shape, rate, rng, x.dtype)
    mask = np.asarray(mask, dtype=x.dtype)
    return record("dropout", (x,), x.data * mask, lambda g: (g * mask,))


def categorical_cross_entropy(p, y) -> Tensor:
    """Batch mean of -sum(y * log(clip(p))) with one-hot rows in ``y``."""
    p, y = as_tensor(p), as_tensor(y)
    if p.data.ndim != 2 or p.shape != y.shape:
        raise ShapeError(f"cross-entropy: predictions {p.shape} vs labels {y.shape}")
    yd = y.data
    onehot = np.all((yd == 0) | (yd == 1), axis=1) & (yd.sum(axis=1) == 1)
    if not onehot.all():
        row = int(np.argmin(onehot))
        raise LabelError(f"label row {row} is not one-hot: {yd[row].tolist()}")
    check_finite(p.data, "cross-entropy input")
    n = p.shape[0]
    inside = (p.data > CE_CLAMP) & (p.data < 1 - CE_CLAMP)
    pc = np.clip(p.data, CE_CLAMP, 1 - CE_CLAMP)
    loss = -(yd * np.log(pc)).sum() / n

    def backward(g):
        return (g * (-yd / pc) * inside / n, None)

    return record("cross_entropy", (p, y), np.asarray(loss, dtype=p.dtype), backward)
