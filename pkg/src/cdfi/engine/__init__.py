"""Minimal dense tensor engine with reverse-mode differentiation."""

from . import ops
from .checkpoint import load_tensors, save_tensors
from .ops import (
    avg_pool2d,
    broadcast_to,
    concat,
    conv2d,
    elementwise,
    softmax,
    upsample_bilinear,
)
from .tensor import (
    Tensor,
    as_tensor,
    default_dtype,
    is_grad_enabled,
    no_grad,
    parameter,
    precision,
    set_default_dtype,
    strict_mode,
)


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` for every parameter reachable from a scalar ``loss``."""
    loss.backward()


__all__ = [
    "Tensor", "as_tensor", "parameter", "no_grad", "precision", "default_dtype",
    "set_default_dtype", "is_grad_enabled", "strict_mode", "backward", "ops", "conv2d",
    "elementwise", "avg_pool2d", "upsample_bilinear", "concat", "broadcast_to", "softmax",
    "save_tensors", "load_tensors",
]
