"""Independent reference computations used as test oracles.

Nothing here imports the package under test: each function re-derives its
quantity from the defining formula with plain loops or numpy.
"""

import math

import numpy as np


def bilinear_clamped(img, y, x):
    """Bilinear sample of a 2-D array with coordinates clamped to the image."""
    h, w = img.shape
    y = min(max(y, 0.0), h - 1.0)
    x = min(max(x, 0.0), w - 1.0)
    y0, x0 = int(math.floor(y)), int(math.floor(x))
    y1, x1 = min(y0 + 1, h - 1), min(x0 + 1, w - 1)
    fy, fx = y - y0, x - x0
    top = (1 - fx) * img[y0, x0] + fx * img[y0, x1]
    bot = (1 - fx) * img[y1, x0] + fx * img[y1, x1]
    return (1 - fy) * top + fy * bot


def adacof_brute(x, weights, alpha, beta, F, d):
    """Per-pixel deformable sum over F*F taps with a centred dilated grid."""
    x = np.asarray(x, np.float64)
    n_b, n_c, h, w = x.shape
    c = (d * (F - 1)) // 2
    out = np.zeros_like(x)
    for n in range(n_b):
        for ch in range(n_c):
            for i in range(h):
                for j in range(w):
                    acc = 0.0
                    for k in range(F):
                        for l in range(F):
                            t = k * F + l
                            y = i + d * k - c + alpha[n, t, i, j]
                            z = j + d * l - c + beta[n, t, i, j]
                            acc += weights[n, t, i, j] * bilinear_clamped(x[n, ch], y, z)
                    out[n, ch, i, j] = acc
    return out


def conv2d_direct(x, k, b=None, padding=0, stride=1):
    """Six-loop cross-correlation with zero padding."""
    n_b, c_in, h, w = x.shape
    c_out, _, q, _ = k.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    ho = (h + 2 * padding - q) // stride + 1
    wo = (w + 2 * padding - q) // stride + 1
    out = np.zeros((n_b, c_out, ho, wo))
    for n in range(n_b):
        for o in range(c_out):
            for i in range(ho):
                for j in range(wo):
                    s = 0.0 if b is None else float(b[o])
                    for c in range(c_in):
                        for u in range(q):
                            for v in range(q):
                                s += xp[n, c, i * stride + u, j * stride + v] * k[o, c, u, v]
                    out[n, o, i, j] = s
    return out


def numeric_grad(f, x, h=1e-6):
    """Central finite differences of scalar ``f`` with respect to array ``x`` (in place)."""
    g = np.zeros_like(x, dtype=np.float64)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = x[idx]
        x[idx] = old + h
        fp = f()
        x[idx] = old - h
        fm = f()
        x[idx] = old
        g[idx] = (fp - fm) / (2 * h)
    return g


def rel_error(a, b):
    a, b = np.asarray(a, np.float64), np.asarray(b, np.float64)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-12))


def soft_threshold(a, lam):
    return np.sign(a) * np.maximum(np.abs(a) - lam, 0.0)


def ceil_channels(density, c_in):
    return max(1, math.ceil(density * c_in - 1e-9))
