"""Density measurement and channel reformulation of a sparse network.

Each convolution kernel with ``K = C_in * C_out * q * q`` entries has density
``d = nonzeros / K``. Reformulation walks the layer graph from the back:

1. a learnable layer asks each producer for ``max(1, ceil(d * c))`` channels,
   where ``c`` is that producer's share of the layer's current input width;
2. a producer feeding several consumers keeps the largest request;
3. image inputs and heads with fixed semantics (weights, offsets, masks, RGB)
   never change their output width, and neither does a layer with no learnable
   consumer;
4. input widths are then re-derived from the producers, which makes every
   producer/consumer edge consistent by construction.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Tuple

import numpy as np

from .errors import ConfigError
from .network.spec import PASS_THROUGH, LayerSpec, ModelConfig, NetworkSpec

REPORT_COLUMNS = ("layer", "K", "zeros", "sparsity", "density", "c_in", "c_out", "q",
                  "reformed_c_in", "reformed_c_out")


@dataclass
class LayerDensity:
    layer: str
    K: int
    zeros: int
    c_in: int
    c_out: int
    q: int
    reformed_c_in: Optional[int] = None
    reformed_c_out: Optional[int] = None

    @property
    def sparsity(self) -> float:
        return self.zeros / self.K if self.K else 0.0

    @property
    def density(self) -> float:
        return 1.0 - self.sparsity

    def row(self) -> dict:
        out = asdict(self)
        out["sparsity"] = self.sparsity
        out["density"] = self.density
        return {k: out[k] for k in REPORT_COLUMNS}


@dataclass
class DensityReport:
    layers: List[LayerDensity]

    def __getitem__(self, layer_id: str) -> LayerDensity:
        for row in self.layers:
            if row.layer == layer_id:
                return row
        raise KeyError(layer_id)

    @property
    def densities(self) -> Dict[str, float]:
        return {row.layer: row.density for row in self.layers}

    @property
    def overall_density(self) -> float:
        total = sum(r.K for r in self.layers)
        return 1.0 - sum(r.zeros for r in self.layers) / total if total else 1.0

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=REPORT_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for row in self.layers:
            writer.writerow(row.row())
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps({"overall_density": self.overall_density,
                           "layers": [r.row() for r in self.layers]}, indent=2) + "\n"

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(self.to_csv() if path.suffix == ".csv" else self.to_json())
        return path


def kernel_zeros(kernel) -> Tuple[int, int]:
    """``(exact zeros, total entries)`` of one kernel array."""
    arr = np.asarray(kernel)
    return int(arr.size - np.count_nonzero(arr)), int(arr.size)


def measure_density(model) -> DensityReport:
    """Per-convolution zero counts for an :class:`InterpNet` (biases excluded)."""
    rows = []
    for layer_id, weight in model.kernel_parameters():
        zeros, total = kernel_zeros(weight.data)
        c_out, c_in, q, _ = weight.shape
        rows.append(LayerDensity(layer_id, total, zeros, c_in, c_out, q))
    return DensityReport(rows)


@dataclass
class ReformPlan:
    """Old and new channel widths per learnable layer plus predicted totals."""

    mapping: List[dict]
    params_before: int
    params_after: int
    spec: NetworkSpec = field(repr=False)
    config: Optional[ModelConfig] = None

    @property
    def is_identity(self) -> bool:
        return all(m["c_in"] == m["new_c_in"] and m["c_out"] == m["new_c_out"] for m in self.mapping)

    def to_dict(self) -> dict:
        return {"params_before": self.params_before, "params_after": self.params_after,
                "layers": self.mapping,
                "model": self.config.to_dict() if self.config else None}

    def save_config(self, path) -> Path:
        if self.config is None:
            raise ConfigError("this plan carries no model config")
        self.config.save(path)
        return Path(path)


def config_from_spec(spec: NetworkSpec) -> ModelConfig:
    return ModelConfig(kernel_size=spec.kernel_size, dilation=spec.dilation,
                       width_multiplier=spec.width_multiplier, pyramid=spec.mode != "adacof",
                       path_selection=spec.mode == "full", weight_softmax=spec.weight_softmax)


def _sources(spec: NetworkSpec, layer: LayerSpec) -> List[Tuple[str, int]]:
    """Channel producers of ``layer``'s input, looking through pass-through nodes."""
    out = []
    for src in layer.inputs:
        node = spec[src]
        while node.kind in PASS_THROUGH:
            node = spec[node.inputs[0]]
        out.append((node.id, spec[src].out_channels))
    return out


def _fixed(layer: LayerSpec) -> bool:
    return layer.kind in ("input", "output") or layer.fixed_out


def reform(spec: NetworkSpec, report: DensityReport,
           config: Optional[ModelConfig] = None) -> Tuple[ReformPlan, NetworkSpec]:
    """Shrink every layer to the channels its density says it needs."""
    learnable = {layer.id: layer for layer in spec.learnable_layers}
    covered = {row.layer for row in report.layers}
    missing = sorted(set(learnable) - covered)
    if missing:
        raise ConfigError(f"density report lacks layers {missing}")
    unknown = sorted(covered - set(learnable))
    if unknown:
        raise ConfigError(f"density report names layers not in the network: {unknown}")

    demand: Dict[str, int] = {}
    for layer in reversed(spec.layers):
        if layer.id not in learnable:
            continue
        d = report[layer.id].density
        if not 0.0 <= d <= 1.0:
            raise ConfigError(f"density of {layer.id!r} is outside [0, 1]: {d}")
        for producer, width in _sources(spec, layer):
            need = max(1, math.ceil(d * width - 1e-9))
            demand[producer] = max(demand.get(producer, 0), need)

    new_out = {}
    for layer in spec.learnable_layers:
        if _fixed(layer) or layer.id not in demand:
            new_out[layer.id] = layer.out_channels
        else:
            new_out[layer.id] = min(layer.out_channels, demand[layer.id])
    new_spec = spec.with_channels(new_out)

    mapping = []
    for layer in spec.learnable_layers:
        new = new_spec[layer.id]
        mapping.append({"layer": layer.id, "c_in": layer.in_channels, "c_out": layer.out_channels,
                        "new_c_in": new.in_channels, "new_c_out": new.out_channels})
        row = report[layer.id]
        row.reformed_c_in, row.reformed_c_out = new.in_channels, new.out_channels

    base = config if config is not None else config_from_spec(spec)
    overrides = {k: v for k, v in new_spec.channel_overrides().items() if not new_spec[k].fixed_out}
    new_config = ModelConfig(**{**base.to_dict(), "channels": overrides})
    plan = ReformPlan(mapping, spec.parameter_count(), new_spec.parameter_count(), new_spec, new_config)
    return plan, new_spec


def instantiate_reformed(plan: ReformPlan, seed: int = 0):
    """Fresh, randomly initialised model with the plan's widths (no weight transfer)."""
    from .network.model import InterpNet

    model = InterpNet(plan.config, seed=seed)
    if model.parameter_count() != plan.params_after:
        raise ConfigError(
            f"reformed model has {model.parameter_count()} parameters, plan predicted {plan.params_after}"
        )
    return model


def density_from_mapping(kernels: Mapping[str, np.ndarray]) -> DensityReport:
    """Density report for bare kernels shaped (C_out, C_in, q, q)."""
    rows = []
    for layer_id, kernel in kernels.items():
        arr = np.asarray(kernel)
        zeros, total = kernel_zeros(arr)
        c_out, c_in, q = arr.shape[:3] if arr.ndim == 4 else (1, arr.size, 1)
        rows.append(LayerDensity(layer_id, total, zeros, c_in, c_out, q))
    return DensityReport(rows)
