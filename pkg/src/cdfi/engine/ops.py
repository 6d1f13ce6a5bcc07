"""Differentiable operations on :class:`~cdfi.engine.tensor.Tensor`.

Every function accepts tensors (or plain arrays/scalars where noted) and
returns a new tensor wired into the graph when any input requires grad.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from ..errors import DimensionError, NumericError
from .tensor import Tensor, as_tensor, is_strict

__all__ = [
    "add", "sub", "mul", "div", "sigmoid", "relu", "leaky_relu", "sqrt", "square",
    "exp", "elementwise", "sum", "mean", "reshape", "getitem", "concat", "broadcast_to",
    "softmax", "clamp", "conv2d", "avg_pool2d", "upsample_bilinear", "l2norm",
]


def _binary_operands(a, b):
    # bare scalars take the tensor operand's dtype so float32 graphs stay float32
    if isinstance(b, Tensor) and not isinstance(a, Tensor) and np.ndim(a) == 0:
        a = Tensor(np.asarray(a, dtype=b.dtype))
    elif isinstance(a, Tensor) and not isinstance(b, Tensor) and np.ndim(b) == 0:
        b = Tensor(np.asarray(b, dtype=a.dtype))
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape and a.ndim != 0 and b.ndim != 0:
        raise DimensionError(
            f"shapes {a.shape} and {b.shape} are not compatible (only scalar broadcasting is supported)"
        )
    return a, b


def _reduce_to(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    return np.asarray(grad.sum(), dtype=grad.dtype).reshape(shape)


# ---------------------------------------------------------------- elementwise
def add(a, b) -> Tensor:
    a, b = _binary_operands(a, b)
    out = a.data + b.data

    def backward(g):
        return _reduce_to(g, a.shape), _reduce_to(g, b.shape)

    return Tensor._make(out, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = _binary_operands(a, b)
    out = a.data - b.data

    def backward(g):
        return _reduce_to(g, a.shape), _reduce_to(-g, b.shape)

    return Tensor._make(out, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _binary_operands(a, b)
    out = a.data * b.data

    def backward(g):
        return _reduce_to(g * b.data, a.shape), _reduce_to(g * a.data, b.shape)

    return Tensor._make(out, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = _binary_operands(a, b)
    if is_strict() and np.any(b.data == 0):
        raise NumericError("division by exact zero")
    with np.errstate(divide="ignore", invalid="ignore"):
        out = a.data / b.data

    def backward(g):
        ga = g / b.data
        gb = -g * a.data / (b.data * b.data)
        return _reduce_to(ga, a.shape), _reduce_to(gb, b.shape)

    return Tensor._make(out, (a, b), backward)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign to avoid overflow in exp
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    s = _sigmoid(x.data)
    # sigmoid saturates to exactly 0/1 in float32 beyond |x|~17; keep it open
    eps = np.finfo(s.dtype).eps
    np.clip(s, eps, 1.0 - eps, out=s)
    return Tensor._make(s, (x,), lambda g: (g * s * (1.0 - s),))


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return Tensor._make(x.data * mask, (x,), lambda g: (g * mask,))


def leaky_relu(x, slope: float = 0.1) -> Tensor:
    x = as_tensor(x)
    scale = np.where(x.data > 0, 1.0, slope).astype(x.dtype)
    return Tensor._make(x.data * scale, (x,), lambda g: (g * scale,))


def sqrt(x) -> Tensor:
    x = as_tensor(x)
    if np.any(x.data < 0):
        raise NumericError("sqrt of a negative value")
    out = np.sqrt(x.data)

    def backward(g):
        with np.errstate(divide="ignore"):
            return (g * 0.5 / out,)

    return Tensor._make(out, (x,), backward)


def square(x) -> Tensor:
    x = as_tensor(x)
    return Tensor._make(x.data * x.data, (x,), lambda g: (2.0 * g * x.data,))


def exp(x) -> Tensor:
    x = as_tensor(x)
    out = np.exp(x.data)
    return Tensor._make(out, (x,), lambda g: (g * out,))


_UNARY = {"sigmoid": sigmoid, "relu": relu, "leaky_relu": leaky_relu, "sqrt": sqrt,
          "square": square, "exp": exp}
_BINARY = {"add": add, "sub": sub, "mul": mul, "div": div}


def elementwise(op_kind: str, a, b=None) -> Tensor:
    """Dispatch by name: ``add sub mul div sigmoid relu leaky_relu sqrt square exp``."""
    if op_kind in _BINARY:
        if b is None:
            raise ValueError(f"{op_kind} needs two operands")
        return _BINARY[op_kind](a, b)
    if op_kind in _UNARY:
        return _UNARY[op_kind](a)
    raise ValueError(f"unknown elementwise op {op_kind!r}")


def clamp(x, lo: float, hi: float) -> Tensor:
    x = as_tensor(x)
    mask = (x.data >= lo) & (x.data <= hi)
    return Tensor._make(np.clip(x.data, lo, hi), (x,), lambda g: (g * mask,))


# --------------------------------------------------------- shape & reduction
def sum(x, axis=None) -> Tensor:  # noqa: A001 - mirrors numpy naming
    x = as_tensor(x)
    out = np.asarray(x.data.sum(axis=axis))

    def backward(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).astype(x.dtype, copy=True),)

    return Tensor._make(out, (x,), backward)


def mean(x, axis=None) -> Tensor:
    x = as_tensor(x)
    count = x.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    return mul(sum(x, axis), 1.0 / count)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    out = x.data.reshape(shape)
    return Tensor._make(out, (x,), lambda g: (g.reshape(x.shape),))


def getitem(x, index) -> Tensor:
    x = as_tensor(x)
    out = x.data[index]

    def backward(g):
        full = np.zeros_like(x.data)
        if _has_advanced(index):
            np.add.at(full, index, g)
        else:
            full[index] = g
        return (full,)

    return Tensor._make(np.array(out), (x,), backward)


def _has_advanced(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def concat(tensors, axis: int = 1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(s != r for i, (s, r) in enumerate(zip(t.shape, ref)) if i != axis % len(ref)):
            raise DimensionError(f"cannot concatenate shapes {ref} and {t.shape} along axis {axis}")
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def backward(g):
        return tuple(np.take(g, np.arange(lo, hi), axis=axis) for lo, hi in zip(bounds[:-1], bounds[1:]))

    return Tensor._make(out, tuple(tensors), backward)


def broadcast_to(x, shape) -> Tensor:
    """Explicit numpy-style broadcast; the gradient is summed back."""
    x = as_tensor(x)
    shape = tuple(shape)
    out = np.broadcast_to(x.data, shape).copy()
    lead = len(shape) - x.ndim
    axes = tuple(range(lead)) + tuple(
        i + lead for i, s in enumerate(x.shape) if s == 1 and shape[i + lead] != 1
    )

    def backward(g):
        return (g.sum(axis=axes, keepdims=True).reshape(x.shape) if axes else g,)

    return Tensor._make(out, (x,), backward)


def softmax(x, axis: int = 1) -> Tensor:
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return Tensor._make(s, (x,), backward)


def l2norm(x) -> Tensor:
    """Euclidean norm of all entries; the gradient at the origin is taken as 0."""
    x = as_tensor(x)
    n = np.sqrt(np.sum(x.data.astype(np.float64) ** 2)).astype(x.dtype)

    def backward(g):
        if n == 0:
            return (np.zeros_like(x.data),)
        return (g * x.data / n,)

    return Tensor._make(np.asarray(n), (x,), backward)


# -------------------------------------------------------------- convolution
def conv2d(x, kernel, bias=None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation (no kernel flip) with zero padding.

    ``x``: (N, C_in, H, W), ``kernel``: (C_out, C_in, q, q), ``bias``: (C_out,).
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    if x.ndim != 4 or kernel.ndim != 4:
        raise DimensionError(f"conv2d expects 4-D input and kernel, got {x.shape} and {kernel.shape}")
    n, c_in, h, w = x.shape
    c_out, k_in, q, q2 = kernel.shape
    if k_in != c_in:
        raise DimensionError(f"input has {c_in} channels but kernel expects {k_in}")
    if q != q2 or q < 1:
        raise DimensionError(f"kernel must be square with q >= 1, got {kernel.shape[2:]}")
    if stride < 1 or padding < 0:
        raise DimensionError("stride must be >= 1 and padding >= 0")
    hp, wp = h + 2 * padding, w + 2 * padding
    if hp < q or wp < q:
        raise DimensionError(f"input {h}x{w} with padding {padding} is smaller than the {q}x{q} kernel")
    h_out = (hp - q) // stride + 1
    w_out = (wp - q) // stride + 1
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (c_out,):
            raise DimensionError(f"bias shape {bias.shape} != ({c_out},)")

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    if q == 1:
        # pointwise: one batched (C_out, C_in) @ (C_in, H*W) product per image
        cols = np.ascontiguousarray(xp[:, :, ::stride, ::stride][:, :, :h_out, :w_out]).reshape(n, c_in, -1)
        out = np.matmul(kernel.data[:, :, 0, 0], cols).reshape(n, c_out, h_out, w_out)
    else:
        win = np.lib.stride_tricks.sliding_window_view(xp, (q, q), axis=(2, 3))
        cols = win[:, :, ::stride, ::stride]
        out = np.einsum("nchwij,ocij->nohw", cols, kernel.data, optimize=True)
    if bias is not None:
        out += bias.data[None, :, None, None]
    out = np.ascontiguousarray(out, dtype=x.dtype)

    def backward(g):
        gk = gx = gb = None
        if kernel.requires_grad:
            if q == 1:
                g3 = g.reshape(n, c_out, -1)
                gk = np.matmul(g3, cols.transpose(0, 2, 1)).sum(axis=0)[:, :, None, None]
            else:
                gk = np.einsum("nohw,nchwij->ocij", g, cols, optimize=True)
            gk = gk.astype(kernel.dtype, copy=False)
        if x.requires_grad and q == 1:
            gsub = np.matmul(kernel.data[:, :, 0, 0].T, g.reshape(n, c_out, -1)).reshape(n, c_in, h_out, w_out)
            gxp = np.zeros_like(xp) if stride > 1 else gsub
            if stride > 1:
                gxp[:, :, : stride * h_out : stride, : stride * w_out : stride] = gsub
            gx = (gxp[:, :, padding : padding + h, padding : padding + w] if padding else gxp).astype(x.dtype, copy=False)
        elif x.requires_grad and stride == 1 and q > 1 and padding <= q - 1:
            # adjoint of a stride-1 correlation: correlate the padded gradient with the flipped kernel
            e = q - 1 - padding
            gp = np.pad(g, ((0, 0), (0, 0), (e, e), (e, e)))
            gwin = np.lib.stride_tricks.sliding_window_view(gp, (q, q), axis=(2, 3))
            gx = np.einsum("nohwij,ocij->nchw", gwin, kernel.data[:, :, ::-1, ::-1], optimize=True)
            gx = gx.astype(x.dtype, copy=False)
        elif x.requires_grad:
            gxp = np.zeros_like(xp)
            kd = kernel.data
            for i in range(q):
                for j in range(q):
                    contrib = np.tensordot(kd[:, :, i, j], g, axes=([0], [1]))  # C_in,N,H',W'
                    gxp[:, :, i : i + stride * h_out : stride, j : j + stride * w_out : stride] += (
                        contrib.transpose(1, 0, 2, 3)
                    )
            gx = gxp[:, :, padding : padding + h, padding : padding + w] if padding else gxp
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        return gx, gk, gb

    parents = (x, kernel) if bias is None else (x, kernel, bias)
    return Tensor._make(out, parents, backward)


# ------------------------------------------------------ pooling & resizing
def avg_pool2d(x, factor: int) -> Tensor:
    """Non-overlapping mean pooling; extents must be divisible by ``factor``."""
    x = as_tensor(x)
    if int(factor) != factor or factor < 1:
        raise DimensionError(f"pooling factor must be a positive integer, got {factor}")
    factor = int(factor)
    if factor == 1:
        return x
    *lead, h, w = x.shape
    if h % factor or w % factor:
        raise DimensionError(f"extent {h}x{w} is not divisible by pooling factor {factor}")
    blocks = x.data.reshape(*lead, h // factor, factor, w // factor, factor)
    out = blocks.mean(axis=(-3, -1))

    def backward(g):
        g = np.repeat(np.repeat(g, factor, axis=-2), factor, axis=-1)
        return (g / (factor * factor),)

    return Tensor._make(out.astype(x.dtype, copy=False), (x,), backward)


@lru_cache(maxsize=64)
def _bilinear_matrix(n_in: int, factor: int, dtype_str: str) -> np.ndarray:
    """Rows map output samples to input samples (align_corners=False)."""
    n_out = n_in * factor
    m = np.zeros((n_out, n_in), dtype=np.float64)
    for o in range(n_out):
        src = max((o + 0.5) / factor - 0.5, 0.0)
        i0 = min(int(np.floor(src)), n_in - 1)
        i1 = min(i0 + 1, n_in - 1)
        frac = src - i0
        m[o, i0] += 1.0 - frac
        m[o, i1] += frac
    m.setflags(write=False)
    return m.astype(dtype_str)


def upsample_bilinear(x, factor: int) -> Tensor:
    """Bilinear upsampling by an integer factor, half-pixel centres."""
    x = as_tensor(x)
    if int(factor) != factor or factor < 1:
        raise DimensionError(f"upsampling factor must be a positive integer, got {factor}")
    factor = int(factor)
    if factor == 1:
        return x
    h, w = x.shape[-2:]
    mh = _bilinear_matrix(h, factor, x.dtype.str)
    mw = _bilinear_matrix(w, factor, x.dtype.str)
    out = np.matmul(np.matmul(mh, x.data), mw.T)

    def backward(g):
        return (np.matmul(np.matmul(mh.T, g), mw),)

    return Tensor._make(out, (x,), backward)
