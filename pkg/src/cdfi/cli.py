"""Command-line interface.

Exit codes: 0 success, 1 unexpected failure, 2 configuration error,
3 data error (missing/malformed dataset, image or log; shape mismatch),
4 numeric error (non-finite values).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import platform
import sys
from dataclasses import asdict
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import __version__
from . import config as cfgmod
from .compress import instantiate_reformed, measure_density, reform
from .data import SyntheticDataset, open_dataset, subset
from .errors import CDFIError, ConfigError, DataError, DimensionError, NumericError
from .imageio import read_image, write_image
from .losses import LossConfig, RandomConvExtractor
from .network.model import InterpNet
from .report import write_report
from .training import JsonlLog, evaluate, sparsify, train

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3, 4
THREADS_ENV = "CDFI_NUM_THREADS"
VAL_OFFSET = 1_000_000
VAL_SIZE = 32

log = logging.getLogger("cdfi")


# ------------------------------------------------------------------ helpers
def apply_thread_limit() -> Optional[int]:
    """Honour ``CDFI_NUM_THREADS`` for BLAS pools and the numba kernels."""
    raw = os.environ.get(THREADS_ENV)
    if not raw:
        return None
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
    import numba
    from threadpoolctl import threadpool_limits

    threadpool_limits(n)
    numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))
    return n


def _versions() -> dict:
    import numba

    return {"cdfi": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "numba": numba.__version__}


def write_manifest(path: Path, args, resolved: dict, outputs: List[str]) -> Path:
    manifest = {
        "command": args.command,
        "argv": getattr(args, "_argv", None),
        "config": resolved,
        "seeds": {k: v for k, v in resolved.items() if k.endswith("seed")},
        "threads": os.environ.get(THREADS_ENV),
        "versions": _versions(),
        "outputs": outputs,
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")
    return path


def _out_dir(path) -> Path:
    out = Path(path)
    if out.exists() and not out.is_dir():
        raise ConfigError(f"{out}: output path exists and is not a directory")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _loss_config(doc: dict) -> LossConfig:
    section = dict(doc.get("loss", {}))
    use_perceptual = section.pop("perceptual", False)
    return LossConfig(feature_extractor=RandomConvExtractor() if use_perceptual else None, **section)


def _datasets(args, doc: dict):
    data = doc.get("data", {})
    train_spec = args.data or data.get("train")
    if not train_spec:
        raise ConfigError("no training data: pass --data or set data.train in the config")
    overrides = data.get("synth")
    train_set = open_dataset(train_spec, overrides)
    val_spec = args.val or data.get("val")
    if val_spec:
        val_set = open_dataset(val_spec, overrides, offset=VAL_OFFSET if val_spec.startswith("synth:") else 0)
    elif str(train_spec).startswith("synth:"):
        # held-out triplets from a disjoint index range of the same generator
        val_set = SyntheticDataset(train_set.config, VAL_SIZE, offset=VAL_OFFSET)
    else:
        val_set = None
    return train_set, val_set, {"train": train_spec, "val": val_spec, "synth": overrides}


def _load_model(path) -> InterpNet:
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: checkpoint not found")
    return InterpNet.load(path)


def _train_flags(args) -> dict:
    return {"epochs": args.epochs, "batch_size": args.batch_size, "lr": args.lr, "seed": args.seed}


def _model_flags(args) -> dict:
    return {"kernel_size": args.kernel_size, "dilation": args.dilation,
            "width_multiplier": args.width_multiplier, "pyramid": args.pyramid,
            "path_selection": args.path_selection, "weight_softmax": args.weight_softmax}


def _run_training(args, model: InterpNet, doc: dict, extra: dict) -> int:
    out = _out_dir(args.out)
    tcfg = cfgmod.train_config(doc, _train_flags(args))
    train_set, val_set, data_echo = _datasets(args, doc)
    loss = _loss_config(doc)
    model.save(out / "init.ckpt")
    train(model, train_set, val_set, tcfg, loss, JsonlLog(out / "train_steps.jsonl"),
          JsonlLog(out / "train_log.jsonl"), progress=lambda r: log.info("epoch %s", r))
    model.save(out / "model.ckpt")
    resolved = {"model": model.config.to_dict(), "train": asdict(tcfg), "data": data_echo,
                "model_seed": model.seed, "train_seed": tcfg.seed, **extra}
    write_manifest(out / "manifest.json", args, resolved,
                   ["init.ckpt", "model.ckpt", "model.json", "train_log.jsonl", "train_steps.jsonl"])
    print(f"wrote {out / 'model.ckpt'}")
    return EXIT_OK


# ----------------------------------------------------------------- commands
def cmd_train(args) -> int:
    doc = cfgmod.load(args.config)
    mcfg = cfgmod.model_config(doc, _model_flags(args))
    seed = args.seed if args.seed is not None else doc.get("train", {}).get("seed", 0)
    return _run_training(args, InterpNet(mcfg, seed=seed), doc, {})


def cmd_retrain(args) -> int:
    doc = cfgmod.load(args.config)
    path = Path(args.model_config)
    if not path.exists():
        raise ConfigError(f"{path}: reformed model config not found")
    from .network.spec import ModelConfig

    mcfg = ModelConfig.load(path)
    seed = args.seed if args.seed is not None else doc.get("train", {}).get("seed", 0)
    return _run_training(args, InterpNet(mcfg, seed=seed), doc, {"model_config": str(path)})


def cmd_sparsify(args) -> int:
    doc = cfgmod.load(args.config)
    out = _out_dir(args.out)
    scfg = cfgmod.sparse_config(doc, {"lam": args.lam, "epochs": args.epochs, "subset_size": args.subset_size,
                                      "batch_size": args.batch_size, "lr": args.lr, "base": args.base,
                                      "seed": args.seed})
    if args.model:
        model = _load_model(args.model)
    elif args.from_scratch:
        model = InterpNet(cfgmod.model_config(doc, {}), seed=scfg.seed)
    else:
        raise ConfigError("pass --model CHECKPOINT, or --from-scratch for a one-shot run")
    train_set, val_set, data_echo = _datasets(args, doc)
    sparsify(model, subset(train_set, scfg.subset_size), val_set, scfg, _loss_config(doc),
             JsonlLog(out / "sparsify_steps.jsonl"), JsonlLog(out / "sparsify_log.jsonl"),
             progress=lambda r: log.info("epoch %s", r))
    model.save(out / "sparse.ckpt")
    resolved = {"sparsify": asdict(scfg), "data": data_echo, "source": args.model,
                "sparsify_seed": scfg.seed}
    write_manifest(out / "manifest.json", args, resolved,
                   ["sparse.ckpt", "sparse.json", "sparsify_log.jsonl", "sparsify_steps.jsonl"])
    print(f"wrote {out / 'sparse.ckpt'}")
    return EXIT_OK


def cmd_reform(args) -> int:
    out = _out_dir(args.out)
    model = _load_model(args.model)
    report = measure_density(model)
    plan, _ = reform(model.spec, report, model.config)
    instantiate_reformed(plan)  # proves the plan builds and matches its predicted size
    report.save(out / "density.csv")
    report.save(out / "density.json")
    (out / "reform_plan.json").write_text(json.dumps(plan.to_dict(), indent=2) + "\n")
    plan.save_config(out / "reformed_model.json")
    write_manifest(out / "manifest.json", args, {"source": args.model},
                   ["density.csv", "density.json", "reform_plan.json", "reformed_model.json"])
    print(f"density {report.overall_density:.4f}; parameters {plan.params_before} -> {plan.params_after}"
          + (" (identity)" if plan.is_identity else ""))
    return EXIT_OK


def _as_batch(image: np.ndarray) -> np.ndarray:
    return image[None].astype(np.float32)


def cmd_interp(args) -> int:
    model = _load_model(args.model)
    f0, f1 = read_image(args.frame0), read_image(args.frame1)
    if f0.shape != f1.shape:
        raise DimensionError(f"input frames differ in shape: {f0.shape} vs {f1.shape}")
    out = model.forward_inference(_as_batch(f0), _as_batch(f1))
    out_path = Path(args.output)
    write_image(out["frame"][0], out_path)
    outputs = [str(out_path)]
    if args.dump:
        dump = _out_dir(args.dump)
        suffix = out_path.suffix or ".ppm"
        for name in ("candidate_1", "candidate_2", "mask_v1", "mask_v2"):
            target = dump / f"{name}{suffix}"
            write_image(out[name][0], target)
            outputs.append(str(target))
    manifest = out_path.with_name(out_path.name + ".manifest.json")
    write_manifest(manifest, args, {"model": args.model, "frame0": args.frame0, "frame1": args.frame1}, outputs)
    print(f"wrote {out_path}")
    return EXIT_OK


def cmd_eval(args) -> int:
    model = _load_model(args.model)
    doc = cfgmod.load(args.config)
    spec = args.data or doc.get("data", {}).get("val")
    if not spec:
        raise ConfigError("no evaluation data: pass --data or set data.val in the config")
    dataset = open_dataset(spec, doc.get("data", {}).get("synth"),
                           offset=VAL_OFFSET if str(spec).startswith("synth:") else 0)
    result = evaluate(model, dataset)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    ckpt = Path(args.model)
    summary = {
        "name": args.name or ckpt.stem, "mode": model.config.mode, "F": model.config.kernel_size,
        "d": model.config.dilation, "params": model.spec.parameter_count(),
        "kernel_params": model.spec.kernel_count(), "checkpoint_bytes": ckpt.stat().st_size,
        "psnr": result.psnr, "ssim": result.ssim, "n": len(result.records), "data": spec,
    }
    out.write_text(json.dumps(summary, indent=2) + "\n")
    records = out.with_name(out.stem + "_records.jsonl")
    records.write_text("".join(json.dumps(r) + "\n" for r in result.records))
    table = out.with_name(out.stem + "_records.csv")
    table.write_text("id,psnr,ssim\n" + "".join(f"{r['id']},{r['psnr']:.6f},{r['ssim']:.6f}\n"
                                               for r in result.records))
    write_manifest(out.with_name(out.stem + ".manifest.json"), args, {"model": args.model, "data": spec},
                   [str(out), str(records), str(table)])
    print(f"PSNR {result.psnr:.3f} dB  SSIM {result.ssim:.4f}  over {len(result.records)} triplets")
    return EXIT_OK


def cmd_report(args) -> int:
    written = write_report(args.out, args.sparsify_log, args.eval or ())
    write_manifest(Path(args.out) / "manifest.json", args,
                   {"sparsify_log": args.sparsify_log, "eval": args.eval},
                   [str(p) for p in written.values()])
    for name, path in written.items():
        print(f"{name}: {path}")
    return EXIT_OK


# ------------------------------------------------------------------- parser
def _add_common(p, data=True):
    p.add_argument("--config", help="JSON run configuration (see configs/schema.json)")
    if data:
        p.add_argument("--data", help="dataset directory, Vimeo-style tree, or synth:<preset>:<n>[:<seed>]")
        p.add_argument("--val", help="held-out dataset (same forms as --data)")


def _add_train_flags(p):
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cdfi", description="Compression-driven frame interpolation toolkit.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from scratch")
    _add_common(p)
    _add_train_flags(p)
    p.add_argument("--kernel-size", type=int, help="AdaCoF kernel size F")
    p.add_argument("--dilation", type=int, help="AdaCoF dilation d")
    p.add_argument("--width-multiplier", type=int)
    p.add_argument("--pyramid", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--path-selection", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--weight-softmax", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sparsify", help="l1 fine-tuning with orthant projection")
    _add_common(p)
    p.add_argument("--model", help="checkpoint to sparsify")
    p.add_argument("--from-scratch", action="store_true", help="start from a fresh model (config model section)")
    p.add_argument("--lam", type=float, help="l1 weight")
    p.add_argument("--epochs", type=int)
    p.add_argument("--subset-size", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--base", choices=["adamax", "sgd"])
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sparsify)

    p = sub.add_parser("reform", help="density report and reformed model config")
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_reform)

    p = sub.add_parser("retrain", help="train a reformed model config from scratch")
    _add_common(p)
    _add_train_flags(p)
    p.add_argument("--model-config", required=True, help="reformed_model.json written by reform")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_retrain)

    p = sub.add_parser("interp", help="interpolate the middle frame of two images")
    p.add_argument("--model", required=True)
    p.add_argument("frame0")
    p.add_argument("frame1")
    p.add_argument("output")
    p.add_argument("--dump", metavar="DIR", help="also write candidate_1/2 and masks V1/V2")
    p.set_defaults(func=cmd_interp)

    p = sub.add_parser("eval", help="PSNR/SSIM of a checkpoint on a dataset")
    _add_common(p, data=False)
    p.add_argument("--model", required=True)
    p.add_argument("--data", help="evaluation dataset (defaults to data.val of --config)")
    p.add_argument("--name", help="row label in reports")
    p.add_argument("--out", required=True, help="summary JSON path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="plots and tables from logs and evaluations")
    p.add_argument("--sparsify-log")
    p.add_argument("--eval", nargs="*", help="summary JSON files written by eval")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    args._argv = argv
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        apply_thread_limit()
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, DimensionError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except CDFIError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
