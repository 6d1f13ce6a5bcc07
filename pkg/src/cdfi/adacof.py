"""Adaptive collaboration of flows: per-pixel deformable separable convolution.

For every output pixel ``(i, j)`` and each of the ``F*F`` kernel taps ``(k, l)``
the input is sampled bilinearly at

    (i + d*k - c + alpha[k*F+l, i, j],  j + d*l - c + beta[k*F+l, i, j])

with ``c = (d*(F-1)) // 2`` centring the dilated grid on the reference pixel,
and the samples are combined with the per-pixel weights ``W[k*F+l, i, j]``.
The same fields are applied to every channel.

Borders use replicate padding. Sampling a replicate-padded image with
coordinates clamped to the padded extent is identical to clamping the
coordinates to the original image, which is what the fast kernels do; the
reference implementation pads explicitly.
"""

from __future__ import annotations

import importlib.util
import math
import os
from dataclasses import dataclass
from typing import Any

import numba
import numpy as np

from .engine import Tensor, as_tensor, ops
from .errors import ConfigError, DimensionError, NumericError

__all__ = [
    "AdaCoFParams", "WarpPair", "adacof_forward", "adacof_backward", "adacof",
    "adacof_forward_reference", "adacof_backward_reference", "blend", "centre_offset",
]

if "NUMBA_THREADING_LAYER" not in os.environ and importlib.util.find_spec("numba.np.ufunc.omppool"):
    # the bundled TBB is too old and only produces warnings
    numba.config.THREADING_LAYER = "omp"

# extra replicate margin (pixels) added around the F*d border in the reference path
DEFAULT_MARGIN = 4


def centre_offset(kernel_size: int, dilation: int) -> int:
    return (dilation * (kernel_size - 1)) // 2


def _values(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x)


@dataclass
class AdaCoFParams:
    """Per-pixel kernel weights and offsets for one warping direction.

    ``weights``, ``alpha`` (vertical) and ``beta`` (horizontal) have shape
    ``(N, F*F, H, W)`` and may be arrays or tensors.
    """

    weights: Any
    alpha: Any
    beta: Any
    kernel_size: int
    dilation: int = 1

    def __post_init__(self):
        if self.kernel_size < 1:
            raise ConfigError(f"kernel size must be >= 1, got {self.kernel_size}")
        if self.dilation < 0:
            raise ConfigError(f"dilation must be >= 0, got {self.dilation}")
        taps = self.kernel_size ** 2
        shapes = {name: tuple(_values(getattr(self, name)).shape) for name in ("weights", "alpha", "beta")}
        ref = shapes["weights"]
        if len(ref) != 4 or ref[1] != taps:
            raise DimensionError(f"weights must have shape (N, {taps}, H, W), got {ref}")
        for name, shape in shapes.items():
            if shape != ref:
                raise DimensionError(f"{name} shape {shape} differs from weights shape {ref}")

    @property
    def shape(self) -> tuple:
        return tuple(_values(self.weights).shape)

    def arrays(self):
        return _values(self.weights), _values(self.alpha), _values(self.beta)


@dataclass
class WarpPair:
    """Parameters warping frame 0 (``forward``) and frame 1 (``backward``) toward t."""

    forward: AdaCoFParams
    backward: AdaCoFParams

    def __post_init__(self):
        f, b = self.forward, self.backward
        if (f.kernel_size, f.dilation, f.shape) != (b.kernel_size, b.dilation, b.shape):
            raise DimensionError("forward and backward parameters must share F, d and shape")


def _check(x: np.ndarray, params: AdaCoFParams):
    if x.ndim != 4:
        raise DimensionError(f"input must be (N, C, H, W), got {x.shape}")
    n, _, h, w = x.shape
    pshape = params.shape
    if (pshape[0], pshape[2], pshape[3]) != (n, h, w):
        raise DimensionError(f"parameter fields {pshape} do not match input {x.shape}")
    weights, alpha, beta = params.arrays()
    if not (np.all(np.isfinite(alpha)) and np.all(np.isfinite(beta))):
        raise NumericError("non-finite AdaCoF offsets")
    return weights, alpha, beta


# ------------------------------------------------------------------ kernels
@numba.njit(cache=True, parallel=True)
def _forward_kernel(x, wts, alpha, beta, ksize, dil, out):
    n_b, n_c, h, w = x.shape
    c0 = (dil * (ksize - 1)) // 2
    hmax = h - 1.0
    wmax = w - 1.0
    for n in numba.prange(n_b):
        for i in range(h):
            for j in range(w):
                for k in range(ksize):
                    for l in range(ksize):
                        t = k * ksize + l
                        wt = wts[n, t, i, j]
                        y = i + dil * k - c0 + alpha[n, t, i, j]
                        z = j + dil * l - c0 + beta[n, t, i, j]
                        y = min(max(y, 0.0), hmax)
                        z = min(max(z, 0.0), wmax)
                        y0 = int(math.floor(y))
                        z0 = int(math.floor(z))
                        y1 = min(y0 + 1, h - 1)
                        z1 = min(z0 + 1, w - 1)
                        fy = y - y0
                        fz = z - z0
                        a00 = (1.0 - fy) * (1.0 - fz)
                        a01 = (1.0 - fy) * fz
                        a10 = fy * (1.0 - fz)
                        a11 = fy * fz
                        for c in range(n_c):
                            v = (a00 * x[n, c, y0, z0] + a01 * x[n, c, y0, z1]
                                 + a10 * x[n, c, y1, z0] + a11 * x[n, c, y1, z1])
                            out[n, c, i, j] += wt * v


@numba.njit(cache=True, parallel=True)
def _backward_kernel(g, x, wts, alpha, beta, ksize, dil, need_x, gx, gw, ga, gb):
    n_b, n_c, h, w = x.shape
    c0 = (dil * (ksize - 1)) // 2
    hmax = h - 1.0
    wmax = w - 1.0
    for n in numba.prange(n_b):
        for i in range(h):
            for j in range(w):
                for k in range(ksize):
                    for l in range(ksize):
                        t = k * ksize + l
                        wt = wts[n, t, i, j]
                        yr = i + dil * k - c0 + alpha[n, t, i, j]
                        zr = j + dil * l - c0 + beta[n, t, i, j]
                        y = min(max(yr, 0.0), hmax)
                        z = min(max(zr, 0.0), wmax)
                        # clamped coordinates have zero derivative
                        in_y = 1.0 if (yr >= 0.0 and yr <= hmax) else 0.0
                        in_z = 1.0 if (zr >= 0.0 and zr <= wmax) else 0.0
                        y0 = int(math.floor(y))
                        z0 = int(math.floor(z))
                        y1 = min(y0 + 1, h - 1)
                        z1 = min(z0 + 1, w - 1)
                        fy = y - y0
                        fz = z - z0
                        a00 = (1.0 - fy) * (1.0 - fz)
                        a01 = (1.0 - fy) * fz
                        a10 = fy * (1.0 - fz)
                        a11 = fy * fz
                        acc_w = 0.0
                        acc_y = 0.0
                        acc_z = 0.0
                        for c in range(n_c):
                            gv = g[n, c, i, j]
                            p00 = x[n, c, y0, z0]
                            p01 = x[n, c, y0, z1]
                            p10 = x[n, c, y1, z0]
                            p11 = x[n, c, y1, z1]
                            acc_w += gv * (a00 * p00 + a01 * p01 + a10 * p10 + a11 * p11)
                            acc_y += gv * ((1.0 - fz) * (p10 - p00) + fz * (p11 - p01))
                            acc_z += gv * ((1.0 - fy) * (p01 - p00) + fy * (p11 - p10))
                            if need_x:
                                gwv = gv * wt
                                gx[n, c, y0, z0] += gwv * a00
                                gx[n, c, y0, z1] += gwv * a01
                                gx[n, c, y1, z0] += gwv * a10
                                gx[n, c, y1, z1] += gwv * a11
                        gw[n, t, i, j] = acc_w
                        # y1 == y0 at the last row: the sample is the edge value, slope 0
                        ga[n, t, i, j] = wt * acc_y * in_y if y1 != y0 else 0.0
                        gb[n, t, i, j] = wt * acc_z * in_z if z1 != z0 else 0.0


def _common_dtype(*arrays) -> np.dtype:
    return np.result_type(*arrays)


def adacof_forward(x, params: AdaCoFParams) -> np.ndarray:
    """Warp ``x`` (N, C, H, W) with ``params``; returns an array of the same shape."""
    x = _values(x)
    weights, alpha, beta = _check(x, params)
    dt = _common_dtype(x, weights, alpha, beta)
    out = np.zeros(x.shape, dtype=dt)
    _forward_kernel(np.ascontiguousarray(x, dt), np.ascontiguousarray(weights, dt),
                    np.ascontiguousarray(alpha, dt), np.ascontiguousarray(beta, dt),
                    params.kernel_size, params.dilation, out)
    return out


def adacof_backward(grad_out, x, params: AdaCoFParams, need_input_grad: bool = True):
    """Gradients ``(grad_input, grad_W, grad_alpha, grad_beta)`` of :func:`adacof_forward`.

    The derivative with respect to the offsets is the slope of the bilinear
    interpolant on the cell containing the sample; it is zero where the
    coordinate was clamped to the border.
    """
    x = _values(x)
    g = _values(grad_out)
    weights, alpha, beta = _check(x, params)
    if g.shape != x.shape:
        raise DimensionError(f"grad_out shape {g.shape} != input shape {x.shape}")
    dt = _common_dtype(g, x, weights, alpha, beta)
    gx = np.zeros(x.shape, dtype=dt)
    gw = np.empty(weights.shape, dtype=dt)
    ga = np.empty(weights.shape, dtype=dt)
    gb = np.empty(weights.shape, dtype=dt)
    _backward_kernel(np.ascontiguousarray(g, dt), np.ascontiguousarray(x, dt),
                     np.ascontiguousarray(weights, dt), np.ascontiguousarray(alpha, dt),
                     np.ascontiguousarray(beta, dt), params.kernel_size, params.dilation,
                     need_input_grad, gx, gw, ga, gb)
    return (gx if need_input_grad else None), gw, ga, gb


def adacof(x, params: AdaCoFParams) -> Tensor:
    """Differentiable warp: gradients flow to ``x`` and to all three fields."""
    x = as_tensor(x)
    wt, al, be = (as_tensor(t) for t in (params.weights, params.alpha, params.beta))
    flat = AdaCoFParams(wt.data, al.data, be.data, params.kernel_size, params.dilation)
    out = adacof_forward(x.data, flat).astype(x.dtype, copy=False)

    def backward(g):
        gx, gw, ga, gb = adacof_backward(g, x.data, flat, need_input_grad=x.requires_grad)
        return gx, gw, ga, gb

    return Tensor._make(out, (x, wt, al, be), backward)


def blend(warped_a, warped_b, mask, strict: bool = False) -> Tensor:
    """``mask * warped_a + (1 - mask) * warped_b`` with identical shapes."""
    a, b, m = as_tensor(warped_a), as_tensor(warped_b), as_tensor(mask)
    if not (a.shape == b.shape == m.shape):
        raise DimensionError(f"blend needs identical shapes, got {a.shape}, {b.shape}, {m.shape}")
    if strict and (np.any(m.data <= 0) or np.any(m.data >= 1)):
        raise NumericError("blend mask outside the open interval (0, 1)")
    return ops.add(ops.mul(m, a), ops.mul(ops.sub(1.0, m), b))


# ------------------------------------------------------- reference (scalar)
def _pad_edge(x: np.ndarray, pad: int) -> np.ndarray:
    return np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)), mode="edge")


def _sample_padded(img, y, z):
    """Bilinear sample of a 2-D array, coordinates clamped to its extent."""
    hp, wp = img.shape
    y = min(max(y, 0.0), hp - 1.0)
    z = min(max(z, 0.0), wp - 1.0)
    y0, z0 = int(math.floor(y)), int(math.floor(z))
    y1, z1 = min(y0 + 1, hp - 1), min(z0 + 1, wp - 1)
    fy, fz = y - y0, z - z0
    return ((1 - fy) * (1 - fz) * img[y0, z0] + (1 - fy) * fz * img[y0, z1]
            + fy * (1 - fz) * img[y1, z0] + fy * fz * img[y1, z1])


def adacof_forward_reference(x, params: AdaCoFParams, margin: int = DEFAULT_MARGIN) -> np.ndarray:
    """Scalar-loop forward over an explicitly replicate-padded input.

    The input is padded by ``F*d + margin`` on each side; samples falling
    beyond that clamp to the padded boundary.
    """
    x = np.asarray(_values(x), dtype=np.float64)
    weights, alpha, beta = (np.asarray(a, dtype=np.float64) for a in _check(x, params))
    ksize, dil = params.kernel_size, params.dilation
    pad = ksize * dil + margin
    xp = _pad_edge(x, pad)
    c0 = centre_offset(ksize, dil)
    n_b, n_c, h, w = x.shape
    out = np.zeros_like(x)
    for n in range(n_b):
        for c in range(n_c):
            img = xp[n, c]
            for i in range(h):
                for j in range(w):
                    acc = 0.0
                    for k in range(ksize):
                        for l in range(ksize):
                            t = k * ksize + l
                            y = pad + i + dil * k - c0 + alpha[n, t, i, j]
                            z = pad + j + dil * l - c0 + beta[n, t, i, j]
                            acc += weights[n, t, i, j] * _sample_padded(img, y, z)
                    out[n, c, i, j] = acc
    return out


def adacof_backward_reference(grad_out, x, params: AdaCoFParams, margin: int = DEFAULT_MARGIN):
    """Scalar-loop gradients over the padded input (gradients of the pad fold back)."""
    x = np.asarray(_values(x), dtype=np.float64)
    g = np.asarray(_values(grad_out), dtype=np.float64)
    weights, alpha, beta = (np.asarray(a, dtype=np.float64) for a in _check(x, params))
    ksize, dil = params.kernel_size, params.dilation
    pad = ksize * dil + margin
    xp = _pad_edge(x, pad)
    c0 = centre_offset(ksize, dil)
    n_b, n_c, h, w = x.shape
    hp, wp = xp.shape[2:]
    gxp = np.zeros_like(xp)
    gw, ga, gb = np.zeros_like(weights), np.zeros_like(alpha), np.zeros_like(beta)
    for n in range(n_b):
        for i in range(h):
            for j in range(w):
                for k in range(ksize):
                    for l in range(ksize):
                        t = k * ksize + l
                        yr = pad + i + dil * k - c0 + alpha[n, t, i, j]
                        zr = pad + j + dil * l - c0 + beta[n, t, i, j]
                        y = min(max(yr, 0.0), hp - 1.0)
                        z = min(max(zr, 0.0), wp - 1.0)
                        y0, z0 = int(math.floor(y)), int(math.floor(z))
                        y1, z1 = min(y0 + 1, hp - 1), min(z0 + 1, wp - 1)
                        fy, fz = y - y0, z - z0
                        wt = weights[n, t, i, j]
                        for c in range(n_c):
                            gv = g[n, c, i, j]
                            img = xp[n, c]
                            gw[n, t, i, j] += gv * _sample_padded(img, y, z)
                            if y1 != y0 and 0.0 <= yr <= hp - 1.0:
                                ga[n, t, i, j] += gv * wt * ((1 - fz) * (img[y1, z0] - img[y0, z0])
                                                             + fz * (img[y1, z1] - img[y0, z1]))
                            if z1 != z0 and 0.0 <= zr <= wp - 1.0:
                                gb[n, t, i, j] += gv * wt * ((1 - fy) * (img[y0, z1] - img[y0, z0])
                                                             + fy * (img[y1, z1] - img[y1, z0]))
                            gxp[n, c, y0, z0] += gv * wt * (1 - fy) * (1 - fz)
                            gxp[n, c, y0, z1] += gv * wt * (1 - fy) * fz
                            gxp[n, c, y1, z0] += gv * wt * fy * (1 - fz)
                            gxp[n, c, y1, z1] += gv * wt * fy * fz
    # adjoint of edge padding: fold border gradients back onto the edge pixels
    gx = gxp[:, :, pad : pad + h, pad : pad + w].copy()
    gx[:, :, 0, :] += gxp[:, :, :pad, pad : pad + w].sum(axis=2)
    gx[:, :, -1, :] += gxp[:, :, pad + h :, pad : pad + w].sum(axis=2)
    gx[:, :, :, 0] += gxp[:, :, pad : pad + h, :pad].sum(axis=3)
    gx[:, :, :, -1] += gxp[:, :, pad : pad + h, pad + w :].sum(axis=3)
    gx[:, :, 0, 0] += gxp[:, :, :pad, :pad].sum(axis=(2, 3))
    gx[:, :, 0, -1] += gxp[:, :, :pad, pad + w :].sum(axis=(2, 3))
    gx[:, :, -1, 0] += gxp[:, :, pad + h :, :pad].sum(axis=(2, 3))
    gx[:, :, -1, -1] += gxp[:, :, pad + h :, pad + w :].sum(axis=(2, 3))
    return gx, gw, ga, gb
