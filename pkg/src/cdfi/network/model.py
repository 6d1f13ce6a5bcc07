"""Interpolation network: U-Net trunk, AdaCoF heads, feature pyramid, GridNet.

Three modes share one trunk:

``adacof``   output is the V1 blend of the two AdaCoF-warped frames
``pyramid``  output is the GridNet synthesis from warped pyramid features
``full``     both candidates, blended by a second mask V2
"""

from __future__ import annotations

import json
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from ..adacof import AdaCoFParams, WarpPair, adacof, blend
from ..engine import Tensor, as_tensor, default_dtype, load_tensors, no_grad, ops, parameter, save_tensors
from ..errors import ConfigError, DimensionError
from .spec import (
    GRID_ROWS,
    OFFSET_HEADS,
    LayerSpec,
    ModelConfig,
    NetworkSpec,
    build_spec,
)

PYRAMID_LEVELS = 5
LEAK = 0.1
INPUT_SHIFT = 0.5


@dataclass
class PyramidFeatures:
    levels: List[Tensor]

    def __post_init__(self):
        if len(self.levels) != PYRAMID_LEVELS:
            raise DimensionError(f"a feature pyramid has {PYRAMID_LEVELS} levels, got {len(self.levels)}")

    @property
    def channels(self):
        return [lvl.shape[1] for lvl in self.levels]


@dataclass
class InterpOutput:
    frame: Tensor
    candidate_1: Tensor
    candidate_2: Optional[Tensor]
    mask_v1: Tensor
    mask_v2: Optional[Tensor]
    warp_pair: WarpPair

    def offsets(self):
        fwd, bwd = self.warp_pair.forward, self.warp_pair.backward
        return fwd.alpha, bwd.alpha, fwd.beta, bwd.beta


def _expand_mask(mask: Tensor, channels: int) -> Tensor:
    n, _, h, w = mask.shape
    return ops.broadcast_to(mask, (n, channels, h, w))


def level_params(params: AdaCoFParams, level: int) -> AdaCoFParams:
    """Average-pool the fields to pyramid ``level`` and rescale offsets by 2**-level."""
    if level == 0:
        return params
    f = 2 ** level
    return AdaCoFParams(
        ops.avg_pool2d(as_tensor(params.weights), f),
        ops.mul(ops.avg_pool2d(as_tensor(params.alpha), f), 1.0 / f),
        ops.mul(ops.avg_pool2d(as_tensor(params.beta), f), 1.0 / f),
        params.kernel_size,
        params.dilation,
    )


def warp_pyramid(features: PyramidFeatures, params: AdaCoFParams) -> PyramidFeatures:
    return PyramidFeatures([adacof(lvl, level_params(params, i)) for i, lvl in enumerate(features.levels)])


class InterpNet:
    """Network built from a :class:`ModelConfig`; parameters live in ``self.params``."""

    def __init__(self, config: ModelConfig = None, seed: int = 0):
        self.config = (config or ModelConfig()).validate()
        self.spec: NetworkSpec = build_spec(self.config)
        self.seed = seed
        self.params: "OrderedDict[str, Tensor]" = OrderedDict()
        self._init_params(np.random.default_rng(seed))

    # ------------------------------------------------------------ parameters
    def _init_params(self, rng) -> None:
        dtype = default_dtype()
        for layer in self.spec.learnable_layers:
            shape = (layer.out_channels, layer.in_channels, layer.kernel, layer.kernel)
            fan_in = layer.in_channels * layer.kernel * layer.kernel
            if layer.id in OFFSET_HEADS:
                w = np.zeros(shape)
            else:
                w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)
            self.params[f"{layer.id}.weight"] = parameter(w.astype(dtype), name=f"{layer.id}.weight")
            self.params[f"{layer.id}.bias"] = parameter(np.zeros(layer.out_channels, dtype), name=f"{layer.id}.bias")

    def parameters(self) -> List[Tensor]:
        return list(self.params.values())

    def kernel_parameters(self):
        """``(layer_id, tensor)`` for every convolution kernel (biases excluded)."""
        return [(layer.id, self.params[f"{layer.id}.weight"]) for layer in self.spec.learnable_layers]

    def parameter_count(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((k, v.data.copy()) for k, v in self.params.items())

    def load_state_dict(self, state) -> None:
        missing = set(self.params) - set(state)
        extra = set(state) - set(self.params)
        if missing or extra:
            raise ConfigError(f"state mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for key, value in state.items():
            value = np.asarray(value)
            if value.shape != self.params[key].shape:
                raise DimensionError(f"{key}: checkpoint shape {value.shape} != model shape {self.params[key].shape}")
            self.params[key].data = value.astype(self.params[key].dtype).copy()

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def save(self, path) -> Path:
        """Write weights to ``path`` and the model config next to it (``.json``)."""
        path = Path(path)
        save_tensors(path, self.params)
        meta = {"model": self.config.to_dict(), "seed": self.seed}
        path.with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
        return path

    @classmethod
    def load(cls, path) -> "InterpNet":
        path = Path(path)
        meta_path = path.with_suffix(".json")
        if not meta_path.exists():
            raise ConfigError(f"missing model config {meta_path}")
        meta = json.loads(meta_path.read_text())
        model = cls(ModelConfig.from_dict(meta["model"]), seed=meta.get("seed", 0))
        model.load_state_dict(load_tensors(path))
        return model

    # ---------------------------------------------------------------- layers
    def _layer(self, layer_id: str, acts: dict) -> Tensor:
        layer: LayerSpec = self.spec[layer_id]
        srcs = [acts[s] for s in layer.inputs]
        x = srcs[0] if len(srcs) == 1 else ops.concat(srcs, axis=1)
        if layer.kind == "pool":
            return ops.avg_pool2d(x, layer.factor)
        if layer.kind == "upsample":
            return ops.upsample_bilinear(x, layer.factor)
        w = self.params[f"{layer_id}.weight"]
        b = self.params[f"{layer_id}.bias"]
        y = ops.conv2d(x, w, b, stride=1, padding=layer.kernel // 2)
        if layer.kind in ("conv", "gridnet-cell"):
            y = ops.leaky_relu(y, LEAK)
        return y

    def _run(self, ids: Sequence[str], acts: dict) -> dict:
        for layer_id in ids:
            acts[layer_id] = self._layer(layer_id, acts)
        return acts

    def _check_frames(self, frame0, frame1):
        I0, I1 = as_tensor(frame0), as_tensor(frame1)
        if I0.shape != I1.shape:
            raise DimensionError(f"frames differ in shape: {I0.shape} vs {I1.shape}")
        if I0.ndim != 4 or I0.shape[1] != 3:
            raise DimensionError(f"frames must be (N, 3, H, W), got {I0.shape}")
        h, w = I0.shape[2:]
        if h % 16 or w % 16:
            raise ConfigError(f"frame extent {h}x{w} must be divisible by 16")
        return I0, I1

    # ------------------------------------------------------------ components
    def encode(self, frame0: Tensor, frame1: Tensor) -> dict:
        acts = {"frame0": ops.sub(frame0, INPUT_SHIFT), "frame1": ops.sub(frame1, INPUT_SHIFT)}
        trunk = [l.id for l in self.spec.layers if l.kind not in ("input", "output", "warp")
                 and not l.id.startswith(("grid_", "pyr"))]
        return self._run(trunk, acts)

    def encoder_stages(self, acts: dict) -> List[Tensor]:
        return [acts[s] for s in ("enc0b", "enc1b", "enc2b", "enc3", "enc4")]

    def extract_pyramid(self, stages: Sequence[Tensor]) -> PyramidFeatures:
        """1x1-filter each encoder stage into one pyramid level."""
        if not self.config.pyramid:
            raise ConfigError("this model was built without a feature pyramid")
        if len(stages) != PYRAMID_LEVELS:
            raise DimensionError(f"expected {PYRAMID_LEVELS} encoder stages, got {len(stages)}")
        levels = []
        for lvl, stage in enumerate(stages):
            layer_id = f"pyr{lvl}"
            levels.append(self._layer(layer_id, {self.spec[layer_id].inputs[0]: as_tensor(stage)}))
        return PyramidFeatures(levels)

    def gridnet_synthesize(self, warped_a: PyramidFeatures, warped_b: PyramidFeatures) -> Tensor:
        if [t.shape for t in warped_a.levels] != [t.shape for t in warped_b.levels]:
            raise DimensionError("warped pyramids differ in shape")
        acts = {}
        for lvl in range(PYRAMID_LEVELS):
            acts[f"warp_fwd{lvl}"] = warped_a.levels[lvl]
            acts[f"warp_bwd{lvl}"] = warped_b.levels[lvl]
        grid = [l.id for l in self.spec.layers if l.id.startswith("grid_")]
        return self._run(grid, acts)["grid_out"]

    def warp_params(self, acts: dict) -> WarpPair:
        cfg = self.config

        def weights(layer_id):
            raw = acts[layer_id]
            return ops.softmax(raw, axis=1) if cfg.weight_softmax else raw

        fwd = AdaCoFParams(weights("weight_fwd"), acts["alpha_fwd"], acts["beta_fwd"], cfg.kernel_size, cfg.dilation)
        bwd = AdaCoFParams(weights("weight_bwd"), acts["alpha_bwd"], acts["beta_bwd"], cfg.kernel_size, cfg.dilation)
        return WarpPair(fwd, bwd)

    # --------------------------------------------------------------- forward
    def forward(self, frame0, frame1, v2_override: Optional[float] = None) -> InterpOutput:
        I0, I1 = self._check_frames(frame0, frame1)
        acts = self.encode(I0, I1)
        pair = self.warp_params(acts)
        mask_v1 = ops.sigmoid(acts["mask_v1"])
        candidate_1 = blend(adacof(I0, pair.forward), adacof(I1, pair.backward), _expand_mask(mask_v1, 3))
        if self.config.mode == "adacof":
            return InterpOutput(candidate_1, candidate_1, None, mask_v1, None, pair)

        pyramid = self.extract_pyramid(self.encoder_stages(acts))
        warped_a = warp_pyramid(pyramid, pair.forward)
        warped_b = warp_pyramid(pyramid, pair.backward)
        candidate_2 = self.gridnet_synthesize(warped_a, warped_b)
        if self.config.mode == "pyramid":
            return InterpOutput(candidate_2, candidate_1, candidate_2, mask_v1, None, pair)

        if v2_override is None:
            mask_v2 = ops.sigmoid(acts["mask_v2"])
        else:
            mask_v2 = Tensor(np.full(mask_v1.shape, v2_override, dtype=mask_v1.dtype))
        frame = blend(candidate_2, candidate_1, _expand_mask(mask_v2, 3))
        return InterpOutput(frame, candidate_1, candidate_2, mask_v1, mask_v2, pair)

    __call__ = forward

    def forward_inference(self, frame0, frame1) -> dict:
        """Graph-free forward returning the clamped frame, both candidates and both masks.

        A mode without a candidate or mask reports the constant it implies:
        adacof mode has V2 = 0 and an all-zero candidate_2, pyramid mode has
        V2 = 1.
        """
        with no_grad():
            out = self.forward(frame0, frame1)
        frame = out.frame.data
        mask_v2 = out.mask_v2.data if out.mask_v2 is not None else None
        if mask_v2 is None:
            mask_v2 = np.full(out.mask_v1.shape, 0.0 if self.config.mode == "adacof" else 1.0, frame.dtype)
        cand2 = out.candidate_2.data if out.candidate_2 is not None else np.zeros_like(frame)
        grey = lambda m: np.repeat(m, 3, axis=1)  # noqa: E731
        return {"frame": np.clip(frame, 0.0, 1.0), "candidate_1": np.clip(out.candidate_1.data, 0.0, 1.0),
                "candidate_2": np.clip(cand2, 0.0, 1.0), "mask_v1": grey(out.mask_v1.data),
                "mask_v2": grey(mask_v2)}

    def predict(self, frame0, frame1) -> np.ndarray:
        """Inference: graph-free forward with the frame clamped to [0, 1]."""
        with no_grad():
            out = self.forward(frame0, frame1)
        return np.clip(out.frame.data, 0.0, 1.0)


def build(config: ModelConfig = None, seed: int = 0):
    """Return ``(spec, model)`` for ``config``."""
    model = InterpNet(config, seed)
    return model.spec, model


def grid_cell_ids(spec: NetworkSpec) -> List[str]:
    return [l.id for l in spec.layers if l.kind == "gridnet-cell"]

