"""Training, evaluation and sparsification loops."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, List, Optional

import numpy as np

from .compress import measure_density
from .data import batches
from .errors import ConfigError, DataError
from .losses import LossConfig, total_loss
from .metrics import psnr, ssim
from .optim import AdaMax, OrthantL1, step_decay

log = logging.getLogger(__name__)


class JsonlLog:
    """Append-only JSON-lines log; ``path=None`` keeps records in memory only."""

    def __init__(self, path=None):
        self.path = Path(path) if path else None
        self.records: List[dict] = []
        if self.path:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text("")

    def write(self, record: dict) -> None:
        self.records.append(record)
        if self.path:
            with self.path.open("a") as fh:
                fh.write(json.dumps(record, sort_keys=True) + "\n")


def read_jsonl(path) -> List[dict]:
    records = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            records.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}:{lineno}: malformed log record ({exc.msg})") from exc
    return records


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 8
    lr: float = 1e-3
    lr_gamma: float = 0.5
    lr_every: int = 20
    seed: int = 0
    augment: bool = True
    val_batch_size: int = 8

    def validate(self) -> "TrainConfig":
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.batch_size < 1 or self.val_batch_size < 1:
            raise ConfigError("batch sizes must be >= 1")
        if not self.lr > 0:
            raise ConfigError("learning rate must be positive")
        if self.lr_every < 1:
            raise ConfigError("lr_every must be >= 1")
        return self


@dataclass
class SparseTrainConfig:
    lam: float = 1e-4
    epochs: int = 20
    subset_size: int = 1000
    batch_size: int = 8
    lr: float = 1e-3
    lr_gamma: float = 0.5
    lr_every: int = 20
    base: str = "adamax"
    seed: int = 0
    augment: bool = True

    def validate(self) -> "SparseTrainConfig":
        if not self.lam > 0:
            raise ConfigError(f"l1 weight must be positive, got {self.lam}")
        if self.epochs < 0 or self.subset_size < 1 or self.batch_size < 1:
            raise ConfigError("epochs >= 0, subset_size >= 1 and batch_size >= 1 are required")
        return self


@dataclass
class EvalResult:
    psnr: float
    ssim: float
    records: List[dict] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {"psnr": self.psnr, "ssim": self.ssim}


def evaluate(model, dataset, batch_size: int = 8, ids: bool = True) -> EvalResult:
    """Mean PSNR/SSIM of clamped predictions, plus one record per triplet."""
    if len(dataset) == 0:
        raise DataError("evaluation set is empty")
    records = []
    k = 0
    for frame0, gt, frame1 in batches(dataset, batch_size, shuffle=False):
        pred = model.predict(frame0, frame1)
        for p, g in zip(pred, gt):
            rec = {"psnr": psnr(p, g), "ssim": ssim(p, g)}
            if ids:
                rec["id"] = getattr(dataset[k], "id", str(k))
            records.append(rec)
            k += 1
    return EvalResult(float(np.mean([r["psnr"] for r in records])),
                      float(np.mean([r["ssim"] for r in records])), records)


def _step(model, opt, frame0, gt, frame1, loss_cfg):
    model.zero_grad()
    out = model.forward(frame0, frame1)
    breakdown = total_loss(out, gt, loss_cfg)
    breakdown.total_tensor.backward()
    warning = opt.step()
    return breakdown, warning


def _run_epochs(model, opt, dataset, val_set, epochs, batch_size, seed, augment, lr_fn,
                loss_cfg, log_steps, log_epochs, epoch_extra: Callable[[], dict], progress):
    step = 0
    for epoch in range(epochs):
        opt.lr = lr_fn(epoch)
        t0 = time.perf_counter()
        totals = []
        for frame0, gt, frame1 in batches(dataset, batch_size, seed=seed, epoch=epoch, augment_data=augment):
            breakdown, warning = _step(model, opt, frame0, gt, frame1, loss_cfg)
            step += 1
            rec = {"epoch": epoch, "step": step, "lr": opt.lr, **breakdown.as_dict()}
            if warning:
                rec["warning"] = warning["reason"]
            log_steps.write(rec)
            totals.append(breakdown.total)
        record = {"epoch": epoch, "loss": float(np.mean(totals)) if totals else float("nan"),
                  "lr": opt.lr, "seconds": time.perf_counter() - t0}
        record.update(epoch_extra())
        if val_set is not None:
            ev = evaluate(model, val_set, ids=False)
            record.update(psnr=ev.psnr, ssim=ev.ssim)
        log_epochs.write(record)
        if progress:
            progress(record)
        log.info("epoch %d: %s", epoch, record)
    return log_epochs.records


def train(model, train_set, val_set=None, config: TrainConfig = None, loss_config: LossConfig = None,
          step_log=None, epoch_log=None, progress=None) -> List[dict]:
    """AdaMax training with step-decayed learning rate. Returns per-epoch records."""
    config = (config or TrainConfig()).validate()
    if len(train_set) == 0:
        raise DataError("training set is empty")
    opt = AdaMax(model.parameters(), lr=config.lr)
    lr_fn = lambda e: step_decay(e, config.lr, config.lr_gamma, config.lr_every)  # noqa: E731
    return _run_epochs(model, opt, train_set, val_set, config.epochs, config.batch_size, config.seed,
                       config.augment, lr_fn, loss_config or LossConfig(), step_log or JsonlLog(),
                       epoch_log or JsonlLog(), dict, progress)


def sparsify(model, subset, val_set=None, config: SparseTrainConfig = None, loss_config: LossConfig = None,
             step_log=None, epoch_log=None, progress=None) -> List[dict]:
    """l1 fine-tuning with orthant projection on kernels; logs density and PSNR per epoch."""
    config = (config or SparseTrainConfig()).validate()
    if len(subset) == 0:
        raise DataError("sparsify needs a non-empty subset")
    params = model.parameters()
    names = list(model.params)
    penalized = [name.endswith(".weight") for name in names]
    opt = OrthantL1(params, lam=config.lam, lr=config.lr, penalized=penalized, base=config.base)
    lr_fn = lambda e: step_decay(e, config.lr, config.lr_gamma, config.lr_every)  # noqa: E731
    extra = lambda: {"density": measure_density(model).overall_density}  # noqa: E731
    return _run_epochs(model, opt, subset, val_set, config.epochs, config.batch_size, config.seed,
                       config.augment, lr_fn, loss_config or LossConfig(), step_log or JsonlLog(),
                       epoch_log or JsonlLog(), extra, progress)


def config_dict(cfg) -> dict:
    return asdict(cfg)
