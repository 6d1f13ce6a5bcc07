"""
The whole loop at toy scale
===========================

Train, sparsify with the l1 penalty, reform, then retrain from scratch.
Everything runs at 48x48 on a few dozen triplets and finishes in seconds.
The numbers show the mechanics only and say nothing about quality. The
acceptance suite runs the same pipeline at 128x128 on 2000 triplets.
"""

from pathlib import Path

from cdfi.data import SynthConfig
from cdfi.experiments import PipelineConfig, run_pipeline
from cdfi.network.spec import ModelConfig
from cdfi.report import write_report
from cdfi.training import SparseTrainConfig, TrainConfig

OUT = Path(__file__).parent / "out" / "pipeline"

cfg = PipelineConfig(
    model=ModelConfig(pyramid=False, path_selection=False),
    data=SynthConfig(height=48, width=48),
    n_train=48,
    n_val=8,
    train=TrainConfig(epochs=3, batch_size=4),
    sparse=SparseTrainConfig(lam=1e-4, epochs=6, subset_size=24, batch_size=4),
)
result = run_pipeline(cfg, OUT, progress=lambda stage, rec: print(stage, rec["epoch"], f"{rec.get('psnr', 0):.2f}",
                                                                   f"density {rec['density']:.3f}" if "density" in rec else ""))
for key, value in result.summary().items():
    print(f"{key:16s} {value}")
print(write_report(OUT / "report", OUT / "sparsify_log.jsonl"))
