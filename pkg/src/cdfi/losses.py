"""Training objective: Charbonnier reconstruction, perceptual and offset TV terms."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .engine import Tensor, as_tensor, ops
from .errors import ConfigError, DimensionError

FeatureExtractor = Callable[[Tensor], Tensor]


@dataclass
class LossConfig:
    epsilon: float = 1e-3
    lambda_vgg: float = 0.005
    lambda_tv: float = 0.01
    feature_extractor: Optional[FeatureExtractor] = None

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ConfigError(f"epsilon must be positive, got {self.epsilon}")
        if self.lambda_vgg < 0 or self.lambda_tv < 0:
            raise ConfigError("loss weights must be non-negative")


@dataclass
class LossBreakdown:
    """Scalar loss terms; ``total_tensor`` carries the graph for backward."""

    charbonnier: float
    perceptual: float
    tv: float
    total: float
    total_tensor: Optional[Tensor] = None

    def as_dict(self) -> dict:
        return {"charbonnier": self.charbonnier, "perceptual": self.perceptual,
                "tv": self.tv, "total": self.total}


def charbonnier(pred, gt, epsilon: float = 1e-3) -> Tensor:
    """Mean over elements of ``sqrt(diff^2 + eps^2)``."""
    pred, gt = as_tensor(pred), as_tensor(gt)
    if pred.shape != gt.shape:
        raise DimensionError(f"prediction {pred.shape} and target {gt.shape} differ in shape")
    diff = pred.data - gt.data
    eps = np.asarray(epsilon, dtype=diff.dtype)
    eps2 = eps * eps
    # eps + mean(rho - eps), with rho - eps = d^2 / (rho + eps): exact at zero difference
    sq = diff * diff
    value = eps + (sq / (np.sqrt(sq + eps2) + eps)).mean()

    def backward(g):
        d = pred.data - gt.data
        gd = g * d / (np.sqrt(d * d + eps2) * d.size)
        return gd.astype(pred.dtype, copy=False), (-gd).astype(gt.dtype, copy=False)

    return Tensor._make(np.asarray(value, dtype=diff.dtype), (pred, gt), backward)


def tv_term(field, epsilon: float = 1e-3) -> Tensor:
    """Sum of rho over horizontal and vertical first differences of a (..., H, W) field."""
    field = as_tensor(field)
    f = field.data
    eps2 = np.asarray(epsilon * epsilon, dtype=f.dtype)
    dx = f[..., :, 1:] - f[..., :, :-1]
    dy = f[..., 1:, :] - f[..., :-1, :]
    value = np.sqrt(dx * dx + eps2).sum() + np.sqrt(dy * dy + eps2).sum()

    def backward(g):
        # recomputed here so the graph only holds the field itself
        dx = f[..., :, 1:] - f[..., :, :-1]
        gx = dx / np.sqrt(dx * dx + eps2)
        dy = f[..., 1:, :] - f[..., :-1, :]
        gy = dy / np.sqrt(dy * dy + eps2)
        out = np.zeros_like(f)
        out[..., :, 1:] += gx
        out[..., :, :-1] -= gx
        out[..., 1:, :] += gy
        out[..., :-1, :] -= gy
        return (out * g,)

    return Tensor._make(np.asarray(value, dtype=f.dtype), (field,), backward)


def tv_offsets(alpha1, alpha2, beta1, beta2, epsilon: float = 1e-3, batch_normalize: bool = True) -> Tensor:
    """Offset smoothness: TV of all four offset fields, divided by the batch size."""
    fields = [as_tensor(f) for f in (alpha1, alpha2, beta1, beta2)]
    total = tv_term(fields[0], epsilon)
    for f in fields[1:]:
        total = ops.add(total, tv_term(f, epsilon))
    if batch_normalize and fields[0].ndim == 4:
        total = ops.mul(total, 1.0 / fields[0].shape[0])
    return total


def perceptual(pred, gt, extractor: Optional[FeatureExtractor]) -> Tensor:
    """``||phi(pred) - phi(gt)||_2``; zero when no extractor is configured."""
    if extractor is None:
        return Tensor(np.zeros((), dtype=as_tensor(pred).dtype))
    return ops.l2norm(ops.sub(extractor(as_tensor(pred)), extractor(as_tensor(gt))))


class RandomConvExtractor:
    """Fixed random convolution stack standing in for a pretrained feature network."""

    def __init__(self, seed: int = 0, channels=(8, 16), in_channels: int = 3):
        rng = np.random.default_rng(seed)
        self.kernels = []
        c_in = in_channels
        for c_out in channels:
            k = rng.normal(0.0, np.sqrt(2.0 / (9 * c_in)), size=(c_out, c_in, 3, 3))
            self.kernels.append(k)
            c_in = c_out

    def __call__(self, x: Tensor) -> Tensor:
        x = as_tensor(x)
        for i, k in enumerate(self.kernels):
            x = ops.conv2d(x, Tensor(k.astype(x.dtype)), padding=1)
            if i < len(self.kernels) - 1:
                x = ops.avg_pool2d(ops.relu(x), 2) if x.shape[-1] % 2 == 0 else ops.relu(x)
        return x


def total_loss(output, gt, config: LossConfig = None) -> LossBreakdown:
    """Charbonnier + lambda_vgg * perceptual + lambda_tv * TV for one network output."""
    config = config or LossConfig()
    charb = charbonnier(output.frame, gt, config.epsilon)
    perc = perceptual(output.frame, gt, config.feature_extractor)
    tv = tv_offsets(*output.offsets(), epsilon=config.epsilon)
    total = ops.add(ops.add(charb, ops.mul(perc, config.lambda_vgg)), ops.mul(tv, config.lambda_tv))
    return LossBreakdown(float(charb.data), float(perc.data), float(tv.data), float(total.data), total)
