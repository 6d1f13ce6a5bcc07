"""Declarative layer graph for the interpolation network.

A :class:`NetworkSpec` lists every node with its kind, producers and channel
counts. Input channels are always derived from the producers (concatenation
along channels), so a spec is valid when every learnable layer's declared
``in_channels`` equals the sum of its producers' ``out_channels``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Tuple

from ..errors import ConfigError

LEARNABLE = ("conv", "head", "1x1-pyramid", "gridnet-cell")
PASS_THROUGH = ("pool", "upsample", "warp")

ENCODER_BASE = (8, 16, 24, 32, 40)
DECODER_BASE = {"dec3": 24, "dec2": 16, "dec1": 12}
HEAD_HIDDEN_BASE = 8
PYRAMID_BASE = (4, 8, 12, 16, 20)
GRID_ROW_BASE = (8, 12, 16)
GRID_COLUMNS = 6
GRID_ROWS = 3
OFFSET_HEADS = ("alpha_fwd", "beta_fwd", "alpha_bwd", "beta_bwd")
WEIGHT_HEADS = ("weight_fwd", "weight_bwd")
MASK_HEADS = ("mask_v1", "mask_v2")


@dataclass
class ModelConfig:
    """User-facing knobs; ``channels`` overrides per-layer output widths."""

    kernel_size: int = 5
    dilation: int = 1
    width_multiplier: int = 1
    pyramid: bool = True
    path_selection: bool = True
    weight_softmax: bool = True
    channels: Dict[str, int] = field(default_factory=dict)

    def validate(self) -> "ModelConfig":
        if int(self.width_multiplier) != self.width_multiplier or self.width_multiplier < 1:
            raise ConfigError(f"width_multiplier must be an integer >= 1, got {self.width_multiplier}")
        if self.kernel_size < 1:
            raise ConfigError(f"kernel_size must be >= 1, got {self.kernel_size}")
        if self.dilation < 0:
            raise ConfigError(f"dilation must be >= 0, got {self.dilation}")
        for name, value in self.channels.items():
            if int(value) != value or value < 1:
                raise ConfigError(f"channel override for {name!r} must be a positive integer")
        return self

    @property
    def mode(self) -> str:
        if not self.pyramid:
            return "adacof"
        return "full" if self.path_selection else "pyramid"

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        cfg = cls(**data)
        cfg.channels = {str(k): int(v) for k, v in (cfg.channels or {}).items()}
        return cfg.validate()

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "ModelConfig":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
        return cls.from_dict(data)


@dataclass
class LayerSpec:
    id: str
    kind: str
    inputs: Tuple[str, ...] = ()
    in_channels: int = 0
    out_channels: int = 0
    kernel: int = 0
    factor: int = 1
    fixed_out: bool = False

    @property
    def learnable(self) -> bool:
        return self.kind in LEARNABLE

    def parameter_count(self) -> int:
        if not self.learnable:
            return 0
        return self.out_channels * self.in_channels * self.kernel * self.kernel + self.out_channels

    def kernel_count(self) -> int:
        return self.out_channels * self.in_channels * self.kernel * self.kernel if self.learnable else 0


@dataclass
class NetworkSpec:
    layers: List[LayerSpec]
    kernel_size: int
    dilation: int
    width_multiplier: int
    mode: str = "full"
    weight_softmax: bool = True

    def __post_init__(self):
        self._index = {layer.id: layer for layer in self.layers}

    def __getitem__(self, layer_id: str) -> LayerSpec:
        return self._index[layer_id]

    def __contains__(self, layer_id: str) -> bool:
        return layer_id in self._index

    def __iter__(self):
        return iter(self.layers)

    @property
    def learnable_layers(self) -> List[LayerSpec]:
        return [layer for layer in self.layers if layer.learnable]

    @property
    def hyper(self) -> dict:
        return {"F": self.kernel_size, "d": self.dilation, "width_multiplier": self.width_multiplier}

    def consumers(self, layer_id: str) -> List[LayerSpec]:
        return [layer for layer in self.layers if layer_id in layer.inputs]

    def parameter_count(self) -> int:
        return sum(layer.parameter_count() for layer in self.layers)

    def kernel_count(self) -> int:
        return sum(layer.kernel_count() for layer in self.layers)

    def validate(self) -> "NetworkSpec":
        seen = set()
        inputs = [layer for layer in self.layers if layer.kind == "input"]
        if len(inputs) != 2:
            raise ConfigError(f"expected exactly two image inputs, found {len(inputs)}")
        for layer in self.layers:
            if layer.id in seen:
                raise ConfigError(f"duplicate layer id {layer.id!r}")
            for src in layer.inputs:
                if src not in seen:
                    raise ConfigError(f"layer {layer.id!r} consumes {src!r} before it is defined")
            seen.add(layer.id)
            if layer.kind in ("input", "output"):
                continue
            fed = sum(self._index[src].out_channels for src in layer.inputs)
            if fed != layer.in_channels:
                raise ConfigError(
                    f"layer {layer.id!r} declares {layer.in_channels} input channels but its producers give {fed}"
                )
            if layer.kind in PASS_THROUGH and layer.out_channels != layer.in_channels:
                raise ConfigError(f"{layer.kind} layer {layer.id!r} cannot change channel count")
            if layer.out_channels < 1:
                raise ConfigError(f"layer {layer.id!r} has no output channels")
        outputs = [layer for layer in self.layers if layer.kind == "output"]
        if len(outputs) != 1 or outputs[0].out_channels != 3:
            raise ConfigError("expected exactly one 3-channel image output")
        return self

    def with_channels(self, out_channels: Dict[str, int]) -> "NetworkSpec":
        """Copy with new output widths; input widths are re-derived."""
        layers = []
        index: Dict[str, LayerSpec] = {}
        for layer in self.layers:
            if layer.kind in ("input", "output"):
                new = replace(layer)
            else:
                c_in = sum(index[src].out_channels for src in layer.inputs)
                if layer.kind in PASS_THROUGH:
                    c_out = c_in
                else:
                    c_out = int(out_channels.get(layer.id, layer.out_channels))
                new = replace(layer, in_channels=c_in, out_channels=c_out)
            layers.append(new)
            index[new.id] = new
        return NetworkSpec(layers, self.kernel_size, self.dilation, self.width_multiplier,
                           self.mode, self.weight_softmax)

    def channel_overrides(self) -> Dict[str, int]:
        return {layer.id: layer.out_channels for layer in self.learnable_layers}

    def to_dict(self) -> dict:
        return {
            "hyper": self.hyper,
            "mode": self.mode,
            "layers": [asdict(layer) for layer in self.layers],
        }


class _Builder:
    def __init__(self):
        self.layers: List[LayerSpec] = []
        self.index: Dict[str, LayerSpec] = {}

    def add(self, layer_id, kind, inputs=(), out=None, kernel=0, factor=1, fixed=False):
        inputs = tuple(inputs)
        c_in = sum(self.index[s].out_channels for s in inputs)
        if kind in PASS_THROUGH:
            out = c_in
        if kind == "output":
            c_in = 0
        layer = LayerSpec(layer_id, kind, inputs, c_in, int(out), kernel, factor, fixed)
        self.layers.append(layer)
        self.index[layer_id] = layer
        return layer_id


def build_spec(config: ModelConfig) -> NetworkSpec:
    """Lay out the encoder/decoder, parameter heads, pyramid and grid."""
    config.validate()
    m = int(config.width_multiplier)
    taps = config.kernel_size ** 2
    ch = config.channels
    b = _Builder()

    def width(layer_id, base):
        return ch.get(layer_id, base * m)

    b.add("frame0", "input", out=3)
    b.add("frame1", "input", out=3)

    # encoder: two convs on the three finest stages, one on the coarsest two
    enc = ENCODER_BASE
    x = b.add("enc0a", "conv", ["frame0", "frame1"], width("enc0a", enc[0]), 3)
    stage0 = b.add("enc0b", "conv", [x], width("enc0b", enc[0]), 3)
    x = b.add("pool1", "pool", [stage0], factor=2)
    x = b.add("enc1a", "conv", [x], width("enc1a", enc[1]), 3)
    stage1 = b.add("enc1b", "conv", [x], width("enc1b", enc[1]), 3)
    x = b.add("pool2", "pool", [stage1], factor=2)
    x = b.add("enc2a", "conv", [x], width("enc2a", enc[2]), 3)
    stage2 = b.add("enc2b", "conv", [x], width("enc2b", enc[2]), 3)
    x = b.add("pool3", "pool", [stage2], factor=2)
    stage3 = b.add("enc3", "conv", [x], width("enc3", enc[3]), 3)
    x = b.add("pool4", "pool", [stage3], factor=2)
    stage4 = b.add("enc4", "conv", [x], width("enc4", enc[4]), 3)
    stages = [stage0, stage1, stage2, stage3, stage4]

    # decoder back to half resolution with skip concatenations
    x = b.add("up3", "upsample", [stage4], factor=2)
    x = b.add("dec3", "conv", [x, stage3], width("dec3", DECODER_BASE["dec3"]), 3)
    x = b.add("up2", "upsample", [x], factor=2)
    x = b.add("dec2", "conv", [x, stage2], width("dec2", DECODER_BASE["dec2"]), 3)
    x = b.add("up1", "upsample", [x], factor=2)
    decoder = b.add("dec1", "conv", [x, stage1], width("dec1", DECODER_BASE["dec1"]), 3)

    # parameter heads: 3x3 at half resolution, upsample, 1x1 with full-res encoder features
    roles = [(h, taps) for h in ("weight_fwd", "alpha_fwd", "beta_fwd", "weight_bwd", "alpha_bwd", "beta_bwd")]
    roles.append(("mask_v1", 1))
    if config.mode == "full":
        roles.append(("mask_v2", 1))
    for role, n_out in roles:
        hid = b.add(f"{role}_hid", "conv", [decoder], width(f"{role}_hid", HEAD_HIDDEN_BASE), 3)
        up = b.add(f"{role}_up", "upsample", [hid], factor=2)
        b.add(role, "head", [up, stage0], n_out, 1, fixed=True)

    final_inputs = ["frame0", "frame1"] + [r for r, _ in roles if r != "mask_v2"]
    if config.pyramid:
        for lvl, stage in enumerate(stages):
            pyr = b.add(f"pyr{lvl}", "1x1-pyramid", [stage], width(f"pyr{lvl}", PYRAMID_BASE[lvl]), 1)
            b.add(f"warp_fwd{lvl}", "warp", [pyr], factor=2 ** lvl)
            b.add(f"warp_bwd{lvl}", "warp", [pyr], factor=2 ** lvl)
        _grid(b, width)
        final_inputs = ["grid_out"] if config.mode == "pyramid" else final_inputs + ["grid_out", "mask_v2"]
    b.add("frame_out", "output", final_inputs, 3)
    return NetworkSpec(b.layers, config.kernel_size, config.dilation, m, config.mode,
                       config.weight_softmax).validate()


def _grid(b: _Builder, width) -> None:
    half = GRID_COLUMNS // 2
    cell = [[None] * GRID_COLUMNS for _ in range(GRID_ROWS)]

    def cell_id(r, c):
        return f"grid_r{r}c{c}"

    # row inputs: levels 0..2, with 3 and 4 folded into row 2
    row_inputs = [[f"warp_fwd{r}", f"warp_bwd{r}"] for r in range(GRID_ROWS)]
    for lvl in (3, 4):
        for direction in ("fwd", "bwd"):
            row_inputs[2].append(
                b.add(f"grid_lift_{direction}{lvl}", "upsample", [f"warp_{direction}{lvl}"], factor=2 ** (lvl - 2))
            )

    # downsampling half, top to bottom
    for c in range(half):
        for r in range(GRID_ROWS):
            srcs = list(row_inputs[r]) if c == 0 else [cell[r][c - 1]]
            if r > 0:
                srcs.append(b.add(f"grid_down_r{r}c{c}", "pool", [cell[r - 1][c]], factor=2))
            cell[r][c] = b.add(cell_id(r, c), "gridnet-cell", srcs,
                               width(cell_id(r, c), GRID_ROW_BASE[r]), 3)
    # upsampling half, bottom to top
    for c in range(half, GRID_COLUMNS):
        for r in reversed(range(GRID_ROWS)):
            srcs = [cell[r][c - 1]]
            if r < GRID_ROWS - 1:
                srcs.append(b.add(f"grid_up_r{r}c{c}", "upsample", [cell[r + 1][c]], factor=2))
            cell[r][c] = b.add(cell_id(r, c), "gridnet-cell", srcs,
                               width(cell_id(r, c), GRID_ROW_BASE[r]), 3)
    b.add("grid_out", "head", [cell[0][GRID_COLUMNS - 1]], 3, 3, fixed=True)


def count_parameters_oracle(layers: Iterable[LayerSpec]) -> int:
    """Sum of ``C_out * C_in * q^2 + C_out`` over learnable layers."""
    return sum(l.out_channels * l.in_channels * l.kernel ** 2 + l.out_channels
               for l in layers if l.kind in LEARNABLE)
