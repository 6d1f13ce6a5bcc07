"""Run configuration files: JSON validated against a published schema.

Precedence is command-line flag > config file > built-in default. Built-in
defaults follow the published training recipe (batch 8, lr 1e-3 halved every
20 epochs, 100 epochs, l1 weight 1e-4 for 20 epochs); the shipped toy configs
under ``configs/`` shrink epochs and data for desk-scale runs.
"""

from __future__ import annotations

import json
from dataclasses import fields
from pathlib import Path

import jsonschema

from .errors import ConfigError
from .network.spec import ModelConfig
from .training import SparseTrainConfig, TrainConfig

_INT = {"type": "integer"}
_NUM = {"type": "number"}
_BOOL = {"type": "boolean"}
_PAIR = {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "cdfi run configuration",
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "model": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "kernel_size": {"type": "integer", "minimum": 1},
                "dilation": {"type": "integer", "minimum": 0},
                "width_multiplier": {"type": "integer", "minimum": 1},
                "pyramid": _BOOL,
                "path_selection": _BOOL,
                "weight_softmax": _BOOL,
                "channels": {"type": "object", "additionalProperties": {"type": "integer", "minimum": 1}},
            },
        },
        "data": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "train": {"type": "string"},
                "val": {"type": "string"},
                "synth": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "height": _INT, "width": _INT, "shapes": _INT,
                        "min_displacement": _NUM, "max_displacement": _NUM,
                        "background_displacement": _NUM,
                        "textures": {"type": "array", "items": {"type": "string"}},
                        "shape_size": _PAIR, "texture_scale": _PAIR, "background_scale": _PAIR,
                        "occlusion_probability": _NUM, "seed": _INT,
                    },
                },
            },
        },
        "train": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "epochs": {"type": "integer", "minimum": 0},
                "batch_size": {"type": "integer", "minimum": 1},
                "lr": {"type": "number", "exclusiveMinimum": 0},
                "lr_gamma": _NUM,
                "lr_every": {"type": "integer", "minimum": 1},
                "seed": _INT,
                "augment": _BOOL,
                "val_batch_size": {"type": "integer", "minimum": 1},
            },
        },
        "sparsify": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "lam": {"type": "number", "exclusiveMinimum": 0},
                "epochs": {"type": "integer", "minimum": 0},
                "subset_size": {"type": "integer", "minimum": 1},
                "batch_size": {"type": "integer", "minimum": 1},
                "lr": {"type": "number", "exclusiveMinimum": 0},
                "lr_gamma": _NUM,
                "lr_every": {"type": "integer", "minimum": 1},
                "base": {"enum": ["adamax", "sgd"]},
                "seed": _INT,
                "augment": _BOOL,
            },
        },
        "loss": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "epsilon": {"type": "number", "exclusiveMinimum": 0},
                "lambda_vgg": {"type": "number", "minimum": 0},
                "lambda_tv": {"type": "number", "minimum": 0},
                "perceptual": _BOOL,
            },
        },
    },
}


def validate(doc: dict, source="config") -> dict:
    try:
        jsonschema.validate(doc, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{source}: {where}: {exc.message}") from None
    return doc


def load(path) -> dict:
    """Read and validate a config file; a missing path means an empty config."""
    if path is None:
        return {}
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"{path}: config file not found")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from None
    return validate(doc, str(path))


def merge(section: dict, flags: dict) -> dict:
    """Config-file values overridden by flags that were actually given (not None)."""
    out = dict(section)
    out.update({k: v for k, v in flags.items() if v is not None})
    return out


def model_config(doc: dict, flags: dict) -> ModelConfig:
    return ModelConfig.from_dict(merge(doc.get("model", {}), flags))


def train_config(doc: dict, flags: dict) -> TrainConfig:
    return TrainConfig(**merge(doc.get("train", {}), flags)).validate()


def sparse_config(doc: dict, flags: dict) -> SparseTrainConfig:
    return SparseTrainConfig(**merge(doc.get("sparsify", {}), flags)).validate()


def field_names(cls) -> list:
    return [f.name for f in fields(cls)]


def write_schema(path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(SCHEMA, indent=2) + "\n")
    return path
