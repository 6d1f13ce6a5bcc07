"""Image quality metrics: PSNR and Gaussian-window SSIM on [0, 1] images."""

from __future__ import annotations

import numpy as np

from .engine import Tensor
from .errors import DimensionError

PSNR_CAP = 100.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
K1, K2 = 0.01, 0.03


def _pair(pred, gt):
    pred = np.asarray(pred.data if isinstance(pred, Tensor) else pred, dtype=np.float64)
    gt = np.asarray(gt.data if isinstance(gt, Tensor) else gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise DimensionError(f"metric inputs differ in shape: {pred.shape} vs {gt.shape}")
    return pred, gt


def psnr(pred, gt) -> float:
    """Peak signal-to-noise ratio in dB for unit-range images, capped at 100 dB."""
    pred, gt = _pair(pred, gt)
    mse = float(np.mean((pred - gt) ** 2))
    if mse < 1e-10:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(1.0 / mse))


def _gaussian_window(size=SSIM_WINDOW, sigma=SSIM_SIGMA) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r ** 2) / (2.0 * sigma ** 2))
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Separable 'valid' filtering over the last two axes."""
    k = len(g)
    rows = np.lib.stride_tricks.sliding_window_view(img, k, axis=-2) @ g
    return np.lib.stride_tricks.sliding_window_view(rows, k, axis=-1) @ g


def ssim(pred, gt) -> float:
    """Mean SSIM over channels (and batch) for arrays shaped (..., H, W).

    Local statistics use an 11x11 Gaussian window (sigma 1.5) evaluated only
    where the window fits inside the image.
    """
    pred, gt = _pair(pred, gt)
    if pred.shape[-1] < SSIM_WINDOW or pred.shape[-2] < SSIM_WINDOW:
        raise DimensionError(f"SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}")
    g = _gaussian_window()
    c1, c2 = (K1 * 1.0) ** 2, (K2 * 1.0) ** 2
    mu_x, mu_y = _filter_valid(pred, g), _filter_valid(gt, g)
    sxx = _filter_valid(pred * pred, g) - mu_x ** 2
    syy = _filter_valid(gt * gt, g) - mu_y ** 2
    sxy = _filter_valid(pred * gt, g) - mu_x * mu_y
    num = (2 * mu_x * mu_y + c1) * (2 * sxy + c2)
    den = (mu_x ** 2 + mu_y ** 2 + c1) * (sxx + syy + c2)
    return float(np.mean(num / den))


def batch_metrics(pred, gt):
    """Per-image ``(psnr, ssim)`` lists for batched (N, C, H, W) arrays."""
    pred, gt = _pair(pred, gt)
    return [psnr(p, t) for p, t in zip(pred, gt)], [ssim(p, t) for p, t in zip(pred, gt)]
