import json
import subprocess
import sys

import numpy as np
import pytest

from cdfi.cli import EXIT_CONFIG, EXIT_DATA, EXIT_OK, main
from cdfi.engine import load_tensors
from cdfi.imageio import read_image, write_image
from cdfi.network.model import InterpNet
from cdfi.network.spec import ModelConfig

CONFIG = {
    "model": {"pyramid": False, "path_selection": False},
    "data": {"synth": {"height": 32, "width": 32}},
    "train": {"epochs": 1, "batch_size": 4},
    "sparsify": {"epochs": 2, "subset_size": 4, "batch_size": 2},
}


@pytest.fixture
def cfg_path(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps(CONFIG))
    return str(path)


def run(*argv):
    return main([str(a) for a in argv])


def test_train_zero_epochs_equals_init(tmp_path, cfg_path):
    out = tmp_path / "t0"
    assert run("train", "--config", cfg_path, "--data", "synth:default:4", "--epochs", "0", "--out", out) == EXIT_OK
    init, final = load_tensors(out / "init.ckpt"), load_tensors(out / "model.ckpt")
    assert all(init[k].tobytes() == final[k].tobytes() for k in init)
    assert (out / "train_log.jsonl").read_text() == ""
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["command"] == "train" and manifest["seeds"]["train_seed"] == 0
    assert set(manifest["versions"]) >= {"cdfi", "numpy", "python"}


def test_defaults_echo_recipe(tmp_path):
    out = tmp_path / "d"
    assert run("train", "--data", "synth:default:2", "--epochs", "0", "--out", out,
               "--no-pyramid", "--no-path-selection") == EXIT_OK
    train = json.loads((out / "manifest.json").read_text())["config"]["train"]
    assert (train["batch_size"], train["lr"], train["lr_gamma"], train["lr_every"]) == (8, 0.001, 0.5, 20)


def test_flag_overrides_config(tmp_path, cfg_path):
    out = tmp_path / "f"
    assert run("train", "--config", cfg_path, "--data", "synth:default:2", "--epochs", "0",
               "--kernel-size", "3", "--out", out) == EXIT_OK
    meta = json.loads((out / "manifest.json").read_text())["config"]
    assert meta["model"]["kernel_size"] == 3 and meta["model"]["pyramid"] is False


def test_pipeline_commands(tmp_path, cfg_path):
    base, sparse, ref, re = (tmp_path / n for n in ("base", "sparse", "reform", "re"))
    assert run("train", "--config", cfg_path, "--data", "synth:default:4", "--out", base) == EXIT_OK
    log = [json.loads(l) for l in (base / "train_log.jsonl").read_text().splitlines()]
    assert len(log) == 1 and {"psnr", "ssim", "loss"} <= set(log[0])
    steps = [json.loads(l) for l in (base / "train_steps.jsonl").read_text().splitlines()]
    assert {"charbonnier", "perceptual", "tv", "total"} <= set(steps[0])

    assert run("reform", "--model", base / "model.ckpt", "--out", ref) == EXIT_OK
    plan = json.loads((ref / "reform_plan.json").read_text())
    # a trained dense checkpoint reforms to itself
    assert plan["params_after"] == plan["params_before"]
    assert all(l["c_in"] == l["new_c_in"] and l["c_out"] == l["new_c_out"] for l in plan["layers"])

    assert run("sparsify", "--config", cfg_path, "--data", "synth:default:4", "--model", base / "model.ckpt",
               "--lam", "0.05", "--out", sparse) == EXIT_OK
    recs = [json.loads(l) for l in (sparse / "sparsify_log.jsonl").read_text().splitlines()]
    assert len(recs) == 2 and all(0 <= r["density"] <= 1 for r in recs)

    assert run("reform", "--model", sparse / "sparse.ckpt", "--out", ref) == EXIT_OK
    plan = json.loads((ref / "reform_plan.json").read_text())
    assert plan["params_after"] < plan["params_before"]
    for name in ("density.csv", "density.json", "reformed_model.json", "manifest.json"):
        assert (ref / name).exists()

    assert run("retrain", "--config", cfg_path, "--data", "synth:default:4", "--epochs", "0",
               "--model-config", ref / "reformed_model.json", "--out", re) == EXIT_OK
    assert InterpNet.load(re / "model.ckpt").parameter_count() == plan["params_after"]

    ev = tmp_path / "eval" / "base.json"
    assert run("eval", "--model", base / "model.ckpt", "--data", "synth:default:3", "--config", cfg_path,
               "--out", ev) == EXIT_OK
    summary = json.loads(ev.read_text())
    assert summary["params"] == InterpNet.load(base / "model.ckpt").parameter_count()
    assert summary["n"] == 3 and (tmp_path / "eval" / "base_records.csv").exists()

    rep = tmp_path / "report"
    assert run("report", "--sparsify-log", sparse / "sparsify_log.jsonl", "--eval", ev, "--out", rep) == EXIT_OK
    for name in ("psnr_vs_density.png", "ablation.md", "sizes.md", "ablation.csv", "manifest.json"):
        assert (rep / name).exists()


def test_interp_and_dump(tmp_path, rng):
    model = InterpNet(ModelConfig(), seed=0)
    model.save(tmp_path / "m.ckpt")
    img = rng.random((3, 32, 48))
    write_image(img, tmp_path / "a.ppm")
    write_image(img, tmp_path / "b.ppm")
    args = ("interp", "--model", tmp_path / "m.ckpt", tmp_path / "a.ppm", tmp_path / "b.ppm")
    assert run(*args, tmp_path / "o1.ppm", "--dump", tmp_path / "dump") == EXIT_OK
    assert run(*args, tmp_path / "o2.ppm") == EXIT_OK
    assert (tmp_path / "o1.ppm").read_bytes() == (tmp_path / "o2.ppm").read_bytes()
    assert sorted(p.name for p in (tmp_path / "dump").iterdir()) == \
        ["candidate_1.ppm", "candidate_2.ppm", "mask_v1.ppm", "mask_v2.ppm"]
    assert read_image(tmp_path / "o1.ppm").shape == (3, 32, 48)
    assert (tmp_path / "o1.ppm.manifest.json").exists()


def test_interp_shape_mismatch(tmp_path, rng):
    InterpNet(ModelConfig(pyramid=False, path_selection=False)).save(tmp_path / "m.ckpt")
    write_image(rng.random((3, 32, 32)), tmp_path / "a.ppm")
    write_image(rng.random((3, 16, 32)), tmp_path / "b.ppm")
    assert run("interp", "--model", tmp_path / "m.ckpt", tmp_path / "a.ppm", tmp_path / "b.ppm",
               tmp_path / "o.ppm") == EXIT_DATA


def test_exit_codes(tmp_path, cfg_path):
    assert run("train", "--data", "nowhere/", "--out", tmp_path / "x") == EXIT_DATA
    assert run("train", "--out", tmp_path / "x") == EXIT_CONFIG
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"train": {"epochs": -1}}))
    assert run("train", "--config", bad, "--data", "synth:default:2", "--out", tmp_path / "x") == EXIT_CONFIG
    bad.write_text("{")
    assert run("train", "--config", bad, "--data", "synth:default:2", "--out", tmp_path / "x") == EXIT_CONFIG
    assert run("reform", "--model", tmp_path / "none.ckpt", "--out", tmp_path / "r") == EXIT_DATA
    assert run("sparsify", "--config", cfg_path, "--data", "synth:default:2", "--out", tmp_path / "s") == EXIT_CONFIG
    log = tmp_path / "log.jsonl"
    log.write_text('{"epoch": 0, "density": 0.5, "psnr": 30}\n{"epoch": 1, "density": 1.5, "psnr": 30}\n')
    assert run("report", "--sparsify-log", log, "--out", tmp_path / "rep") == EXIT_DATA


def test_thread_env(tmp_path, monkeypatch):
    monkeypatch.setenv("CDFI_NUM_THREADS", "zero")
    assert run("train", "--data", "synth:default:2", "--epochs", "0", "--out", tmp_path / "x") == EXIT_CONFIG
    monkeypatch.setenv("CDFI_NUM_THREADS", "1")
    assert run("train", "--data", "synth:default:2", "--epochs", "0", "--out", tmp_path / "y",
               "--no-pyramid") == EXIT_OK
    assert json.loads((tmp_path / "y" / "manifest.json").read_text())["threads"] == "1"


def test_help_lists_subcommands():
    out = subprocess.run([sys.executable, "-m", "cdfi.cli", "--help"], capture_output=True, text=True, check=True)
    for name in ("train", "sparsify", "reform", "retrain", "interp", "eval", "report"):
        assert name in out.stdout


def test_shipped_configs_validate():
    from pathlib import Path

    from cdfi import config

    root = Path(__file__).parent.parent / "configs"
    for path in root.glob("*.json"):
        if path.name != "schema.json":
            config.load(path)
    assert json.loads((root / "schema.json").read_text()) == config.SCHEMA
