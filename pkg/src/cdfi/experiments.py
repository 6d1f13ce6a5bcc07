"""End-to-end runs: train, sparsify, reform, retrain; and the architecture ablation."""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

from .compress import DensityReport, ReformPlan, instantiate_reformed, measure_density, reform
from .data import SynthConfig, generate_triplets, subset
from .losses import LossConfig
from .network.model import InterpNet
from .network.spec import ModelConfig
from .training import EvalResult, JsonlLog, SparseTrainConfig, TrainConfig, evaluate, sparsify, train

VAL_OFFSET = 1_000_000  # validation triplets come from a disjoint index range


@dataclass
class PipelineConfig:
    model: ModelConfig = field(default_factory=lambda: ModelConfig(pyramid=False, path_selection=False))
    data: SynthConfig = field(default_factory=SynthConfig)
    n_train: int = 2000
    n_val: int = 32
    train: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=4))
    # about 160 l1 steps: enough to reach roughly a quarter density on the toy model
    sparse: SparseTrainConfig = field(default_factory=lambda: SparseTrainConfig(subset_size=64, batch_size=8))
    retrain: Optional[TrainConfig] = None
    seed: int = 0

    def to_dict(self) -> dict:
        out = asdict(self)
        out["data"] = self.data.to_dict()
        return out


@dataclass
class PipelineResult:
    baseline: InterpNet
    baseline_eval: EvalResult
    train_log: List[dict]
    train_steps: List[dict]
    sparse_log: List[dict]
    sparse_steps: List[dict]
    density: DensityReport
    plan: ReformPlan
    reformed: InterpNet
    reformed_eval: EvalResult
    retrain_log: List[dict]
    retrain_steps: List[dict]
    untrained_eval: EvalResult
    seconds: Dict[str, float]

    def summary(self) -> dict:
        return {
            "baseline_params": self.baseline.parameter_count(),
            "baseline_psnr": self.baseline_eval.psnr,
            "untrained_psnr": self.untrained_eval.psnr,
            "final_density": self.sparse_log[-1]["density"] if self.sparse_log else None,
            "reformed_params": self.reformed.parameter_count(),
            "planned_params": self.plan.params_after,
            "retrained_psnr": self.reformed_eval.psnr,
            "seconds": self.seconds,
        }


def _log(out_dir, name):
    return JsonlLog(Path(out_dir) / name if out_dir else None)


def run_pipeline(cfg: PipelineConfig, out_dir=None, progress: Optional[Callable[[str, dict], None]] = None,
                 loss: LossConfig = None) -> PipelineResult:
    """Two-stage pipeline: baseline, l1 sparsification, reformulation, retraining from scratch."""
    if out_dir:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
    report = (lambda stage: (lambda rec: progress(stage, rec))) if progress else (lambda stage: None)
    train_set = generate_triplets(cfg.data, cfg.n_train)
    val_set = generate_triplets(cfg.data, cfg.n_val, offset=VAL_OFFSET)
    seconds = {}

    t0 = time.perf_counter()
    baseline = InterpNet(cfg.model, seed=cfg.seed)
    untrained_eval = evaluate(baseline, val_set)
    steps, epochs = _log(out_dir, "train_steps.jsonl"), _log(out_dir, "train_log.jsonl")
    train(baseline, train_set, val_set, cfg.train, loss, steps, epochs, report("train"))
    baseline_eval = evaluate(baseline, val_set)
    seconds["train"] = time.perf_counter() - t0
    if out_dir:
        baseline.save(Path(out_dir) / "baseline.ckpt")

    t0 = time.perf_counter()
    sparse_model = InterpNet(cfg.model, seed=cfg.seed)
    sparse_model.load_state_dict(baseline.state_dict())
    sp_steps, sp_epochs = _log(out_dir, "sparsify_steps.jsonl"), _log(out_dir, "sparsify_log.jsonl")
    sparsify(sparse_model, subset(train_set, cfg.sparse.subset_size), val_set, cfg.sparse, loss,
             sp_steps, sp_epochs, report("sparsify"))
    seconds["sparsify"] = time.perf_counter() - t0
    density = measure_density(sparse_model)
    plan, _ = reform(sparse_model.spec, density, cfg.model)
    if out_dir:
        sparse_model.save(Path(out_dir) / "sparse.ckpt")
        density.save(Path(out_dir) / "density.csv")
        plan.save_config(Path(out_dir) / "reformed_model.json")
        (Path(out_dir) / "reform_plan.json").write_text(json.dumps(plan.to_dict(), indent=2) + "\n")

    t0 = time.perf_counter()
    reformed = instantiate_reformed(plan, seed=cfg.seed)
    re_steps, re_epochs = _log(out_dir, "retrain_steps.jsonl"), _log(out_dir, "retrain_log.jsonl")
    train(reformed, train_set, val_set, cfg.retrain or cfg.train, loss, re_steps, re_epochs, report("retrain"))
    reformed_eval = evaluate(reformed, val_set)
    seconds["retrain"] = time.perf_counter() - t0
    if out_dir:
        reformed.save(Path(out_dir) / "retrained.ckpt")

    result = PipelineResult(baseline, baseline_eval, epochs.records, steps.records, sp_epochs.records,
                            sp_steps.records, density, plan, reformed, reformed_eval, re_epochs.records,
                            re_steps.records, untrained_eval, seconds)
    if out_dir:
        (Path(out_dir) / "summary.json").write_text(json.dumps(result.summary(), indent=2) + "\n")
    return result


MODES = {
    "adacof": dict(pyramid=False, path_selection=False),
    "pyramid": dict(pyramid=True, path_selection=False),
    "full": dict(pyramid=True, path_selection=True),
}


@dataclass
class AblationConfig:
    data: SynthConfig = field(default_factory=lambda: SynthConfig(max_displacement=24.0))
    n_train: int = 400
    n_val: int = 32
    train: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=4))
    modes: Sequence[str] = ("adacof", "pyramid", "full")
    base_model: ModelConfig = field(default_factory=ModelConfig)
    seed: int = 0


def run_ablation(cfg: AblationConfig, out_dir=None,
                 progress: Optional[Callable[[str, dict], None]] = None, loss: LossConfig = None) -> List[dict]:
    """Train each architecture variant with the same data, budget and seed; one row per mode."""
    train_set = generate_triplets(cfg.data, cfg.n_train)
    val_set = generate_triplets(cfg.data, cfg.n_val, offset=VAL_OFFSET)
    rows = []
    for mode in cfg.modes:
        model_cfg = replace(cfg.base_model, **MODES[mode])
        model = InterpNet(model_cfg, seed=cfg.seed)
        t0 = time.perf_counter()
        epochs = _log(out_dir, f"ablation_{mode}.jsonl")
        train(model, train_set, val_set, cfg.train, loss, None, epochs,
              (lambda rec, m=mode: progress(m, rec)) if progress else None)
        ev = evaluate(model, val_set)
        rows.append({"mode": mode, "params": model.parameter_count(), "psnr": ev.psnr, "ssim": ev.ssim,
                     "seconds": time.perf_counter() - t0})
        if out_dir:
            model.save(Path(out_dir) / f"ablation_{mode}.ckpt")
    if out_dir:
        (Path(out_dir) / "ablation.json").write_text(json.dumps(rows, indent=2) + "\n")
    return rows
