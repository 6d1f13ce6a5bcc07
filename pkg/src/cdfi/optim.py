"""AdaMax and an l1 orthant-projection variant for sparsity-inducing fine-tuning.

The l1 step works on the pseudo-gradient of ``f + lam * |theta|``:

* theta != 0: ``g + lam * sign(theta)``
* theta == 0: ``g + lam`` if that is negative, ``g - lam`` if that is positive,
  otherwise 0 (the weight stays put)

The base optimizer (AdaMax or plain SGD) steps along the pseudo-gradient and
every coordinate that leaves its orthant is set to exactly zero. The orthant of
a zero weight is the one the pseudo-gradient points into, so a zero weight with
zero pseudo-gradient cannot move even if AdaMax carries momentum.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .errors import ConfigError, DimensionError

log = logging.getLogger(__name__)

BETA1 = 0.9
BETA2 = 0.999
EPS = 1e-8


def step_decay(epoch: int, base_lr: float = 1e-3, gamma: float = 0.5, every: int = 20) -> float:
    """Learning rate halved (by default) every ``every`` epochs."""
    return base_lr * gamma ** (int(epoch) // every)


@dataclass
class OptState:
    """Per-parameter moment buffers plus a step counter."""

    m: Dict[int, np.ndarray] = field(default_factory=dict)
    u: Dict[int, np.ndarray] = field(default_factory=dict)
    t: int = 0
    skipped: int = 0

    def buffers(self, i: int, like: np.ndarray):
        if i not in self.m:
            self.m[i] = np.zeros_like(like)
            self.u[i] = np.zeros_like(like)
        elif self.m[i].shape != like.shape:
            raise DimensionError(f"optimizer buffer {i} has shape {self.m[i].shape}, parameter {like.shape}")
        return self.m[i], self.u[i]


def _arrays(params) -> List[np.ndarray]:
    return [p if isinstance(p, np.ndarray) else p.data for p in params]


def _finite(grads) -> bool:
    return all(g is None or np.all(np.isfinite(g)) for g in grads)


def _skip(state: OptState) -> dict:
    state.skipped += 1
    log.warning("non-finite gradient at step %d; update skipped", state.t + 1)
    return {"event": "skipped-step", "step": state.t + 1, "reason": "non-finite gradient"}


def _adamax_delta(i: int, g: np.ndarray, state: OptState, lr: float, t: int) -> np.ndarray:
    m, u = state.buffers(i, g)
    m *= BETA1
    m += (1.0 - BETA1) * g
    np.maximum(BETA2 * u, np.abs(g), out=u)
    return (lr / (1.0 - BETA1 ** t)) * m / (u + EPS)


def adamax_step(params, grads, state: OptState, lr: float) -> Optional[dict]:
    """In-place AdaMax update. Returns a warning record if the step was skipped."""
    arrays = _arrays(params)
    if len(arrays) != len(grads):
        raise DimensionError(f"{len(arrays)} parameters but {len(grads)} gradients")
    if not _finite(grads):
        return _skip(state)
    state.t += 1
    for i, (p, g) in enumerate(zip(arrays, grads)):
        if g is None:
            continue
        if g.shape != p.shape:
            raise DimensionError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        p -= _adamax_delta(i, g.astype(p.dtype, copy=False), state, lr, state.t).astype(p.dtype, copy=False)
    return None


def pseudo_gradient(theta: np.ndarray, g: np.ndarray, lam: float) -> np.ndarray:
    """Minimum-norm subgradient of ``f + lam * |theta|``; ``lam`` may be per-coordinate."""
    s = np.sign(theta)
    lam = np.broadcast_to(np.asarray(lam, dtype=g.dtype), g.shape)
    pg = g + lam * s
    at_zero = s == 0
    if np.any(at_zero):
        gz, lz = g[at_zero], lam[at_zero]
        pg[at_zero] = np.where(gz + lz < 0, gz + lz, np.where(gz - lz > 0, gz - lz, 0.0))
    return pg


def orthant_project(theta_new: np.ndarray, orthant: np.ndarray) -> np.ndarray:
    """Zero every coordinate whose sign disagrees with ``orthant`` (in place)."""
    theta_new[np.sign(theta_new) != orthant] = 0.0
    return theta_new


def l1_orthant_step(params, grads, lam: float, lr: float, state: OptState,
                    penalized: Optional[Sequence[bool]] = None, base: str = "adamax") -> Optional[dict]:
    """In-place l1-regularized step with orthant projection.

    ``penalized[i]`` selects which parameters carry the l1 term (kernels but
    not biases). With ``lam == 0`` this is exactly the base step.
    """
    arrays = _arrays(params)
    if len(arrays) != len(grads):
        raise DimensionError(f"{len(arrays)} parameters but {len(grads)} gradients")
    if lam < 0:
        raise ConfigError(f"l1 weight must be >= 0, got {lam}")
    if base not in ("adamax", "sgd"):
        raise ConfigError(f"unknown base optimizer {base!r}")
    if not _finite(grads):
        return _skip(state)
    penalized = [True] * len(arrays) if penalized is None else list(penalized)
    state.t += 1
    for i, (p, g) in enumerate(zip(arrays, grads)):
        if g is None:
            continue
        if g.shape != p.shape:
            raise DimensionError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        g = g.astype(p.dtype, copy=False)
        use_l1 = penalized[i] and lam > 0
        direction = pseudo_gradient(p, g, lam) if use_l1 else g
        if base == "adamax":
            delta = _adamax_delta(i, direction, state, lr, state.t)
        else:
            delta = lr * direction
        if not use_l1:
            p -= delta.astype(p.dtype, copy=False)
            continue
        orthant = np.sign(p)
        orthant[orthant == 0] = -np.sign(direction[orthant == 0])
        new = p - delta.astype(p.dtype, copy=False)
        p[...] = orthant_project(new, orthant)
    return None


class AdaMax:
    """Stateful wrapper over :func:`adamax_step` for a fixed parameter list."""

    def __init__(self, params, lr: float = 1e-3):
        self.params = list(params)
        self.lr = lr
        self.state = OptState()

    def step(self) -> Optional[dict]:
        grads = [p.grad for p in self.params]
        return adamax_step(self.params, grads, self.state, self.lr)


class OrthantL1:
    """Stateful wrapper over :func:`l1_orthant_step`."""

    def __init__(self, params, lam: float = 1e-4, lr: float = 1e-3,
                 penalized: Optional[Sequence[bool]] = None, base: str = "adamax"):
        if lam <= 0:
            raise ConfigError(f"l1 weight must be positive, got {lam}")
        self.params = list(params)
        self.lam = lam
        self.lr = lr
        self.penalized = penalized
        self.base = base
        self.state = OptState()

    def step(self) -> Optional[dict]:
        grads = [p.grad for p in self.params]
        return l1_orthant_step(self.params, grads, self.lam, self.lr, self.state, self.penalized, self.base)
