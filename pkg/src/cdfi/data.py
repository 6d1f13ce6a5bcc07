"""Synthetic triplets, augmentation, on-disk datasets and batching.

A synthetic scene is a textured background plus a few anti-aliased shapes,
each moving linearly. Frame 0 shows the scene at position ``p - v``, frame 1
at ``p + v`` and the ground-truth middle frame at ``p``, so the middle frame is
an exact render rather than an approximation. Textures live in object
coordinates and therefore move with their object.
"""

from __future__ import annotations

import json
import queue
import threading
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigError, DataError, DimensionError
from .imageio import read_image, write_image

TEXTURES = ("flat", "gradient", "sinusoid", "noise", "checker")
SHAPES = ("rect", "ellipse")
FRAME_NAMES = ("f0.ppm", "f1.ppm", "f2.ppm")
MANIFEST = "manifest.json"


@dataclass
class Triplet:
    frame0: np.ndarray
    frame_gt: np.ndarray
    frame1: np.ndarray
    id: str = ""
    motion_meta: Optional[dict] = None

    def __post_init__(self):
        shapes = {self.frame0.shape, self.frame_gt.shape, self.frame1.shape}
        if len(shapes) != 1:
            raise DimensionError(f"triplet {self.id!r} frames differ in shape: {sorted(shapes)}")
        shape = self.frame0.shape
        if len(shape) != 3 or shape[0] != 3:
            raise DimensionError(f"triplet frames must be (3, H, W), got {shape}")
        if shape[1] % 16 or shape[2] % 16:
            raise DimensionError(f"triplet extent {shape[1]}x{shape[2]} must be divisible by 16")

    @property
    def shape(self):
        return self.frame0.shape


@dataclass
class SynthConfig:
    """Scene generator settings. Displacements are pixels per half-step."""

    height: int = 128
    width: int = 128
    shapes: int = 6
    min_displacement: float = 0.0
    max_displacement: float = 2.0
    background_displacement: float = 2.0
    textures: Tuple[str, ...] = ("flat", "gradient", "sinusoid", "noise")
    shape_size: Tuple[float, float] = (0.15, 0.35)
    texture_scale: Tuple[float, float] = (3.0, 10.0)
    background_scale: Tuple[float, float] = (5.0, 14.0)
    occlusion_probability: float = 0.0
    seed: int = 0

    def validate(self) -> "SynthConfig":
        if self.height % 16 or self.width % 16 or self.height < 16 or self.width < 16:
            raise ConfigError(f"canvas {self.height}x{self.width} must be positive multiples of 16")
        if self.shapes < 0:
            raise ConfigError("shape count must be >= 0")
        if not 0 <= self.min_displacement <= self.max_displacement:
            raise ConfigError("displacement range must satisfy 0 <= min <= max")
        if self.background_displacement < 0:
            raise ConfigError("background displacement must be >= 0")
        biggest = max(self.max_displacement, self.background_displacement)
        if 2 * biggest >= min(self.height, self.width):
            raise ConfigError(
                f"a displacement of {biggest} px per half-step exceeds the {self.height}x{self.width} canvas"
            )
        bad = set(self.textures) - set(TEXTURES)
        if bad or not self.textures:
            raise ConfigError(f"textures must be a non-empty subset of {TEXTURES}")
        if not 0 <= self.occlusion_probability <= 1:
            raise ConfigError("occlusion probability must lie in [0, 1]")
        lo, hi = self.shape_size
        if not 0 < lo <= hi <= 1:
            raise ConfigError("shape_size must satisfy 0 < min <= max <= 1")
        for name in ("texture_scale", "background_scale"):
            lo, hi = getattr(self, name)
            if not 0 < lo <= hi:
                raise ConfigError(f"{name} must satisfy 0 < min <= max")
        return self

    def to_dict(self) -> dict:
        out = asdict(self)
        out["textures"] = list(self.textures)
        for key in ("shape_size", "texture_scale", "background_scale"):
            out[key] = list(getattr(self, key))
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "SynthConfig":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown synthetic-data keys: {sorted(unknown)}")
        data = dict(data)
        for key in ("textures", "shape_size", "texture_scale", "background_scale"):
            if key in data:
                data[key] = tuple(data[key])
        return cls(**data).validate()


PRESETS: Dict[str, dict] = {
    "default": {},
    "large-motion": {"min_displacement": 8.0, "max_displacement": 24.0, "background_displacement": 4.0},
    "occlusion": {"shapes": 6, "max_displacement": 6.0, "occlusion_probability": 1.0,
                  "shape_size": (0.25, 0.45)},
}


def preset(name: str, **overrides) -> SynthConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return SynthConfig(**{**PRESETS[name], **overrides}).validate()


# ------------------------------------------------------------------ rendering
@dataclass
class Texture:
    """Colour field in object coordinates, blending two colours by a scalar pattern."""

    kind: str
    colors: np.ndarray
    direction: np.ndarray
    scale: float
    phase: float
    lattice: Optional[np.ndarray] = None

    def __call__(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        c0, c1 = self.colors[0][:, None, None], self.colors[1][:, None, None]
        if self.kind == "flat":
            return np.broadcast_to(c0, (3,) + u.shape)
        proj = (u * self.direction[0] + v * self.direction[1]) / self.scale
        if self.kind == "gradient":
            s = np.clip(proj + 0.5, 0.0, 1.0)
        elif self.kind == "sinusoid":
            s = 0.5 + 0.5 * np.sin(2 * np.pi * proj + self.phase)
        elif self.kind == "checker":
            s = _checker(proj, (v * self.direction[0] - u * self.direction[1]) / self.scale, self.scale)
        else:
            s = _value_noise(self.lattice, u / self.scale, v / self.scale)
        return c0 + (c1 - c0) * s[None]


def _checker(a: np.ndarray, b: np.ndarray, scale: float) -> np.ndarray:
    """Checkerboard with cells of ``scale`` pixels and a one-pixel anti-aliasing ramp."""

    def square(x):
        # +-1 by cell parity, ramping to 0 within half a pixel of a cell edge
        frac = x - np.floor(x)
        edge = np.minimum(frac, 1 - frac) * scale
        sign = np.where(np.floor(x) % 2 == 0, 1.0, -1.0)
        return sign * np.clip(2 * edge, 0.0, 1.0)

    return 0.5 + 0.5 * square(a) * square(b)


def _value_noise(lattice: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Smoothly interpolated lattice noise, periodic in the lattice size."""
    n = lattice.shape[0]
    fu, fv = np.floor(u), np.floor(v)
    tu, tv = u - fu, v - fv
    tu, tv = tu * tu * (3 - 2 * tu), tv * tv * (3 - 2 * tv)
    i0, j0 = fu.astype(np.int64) % n, fv.astype(np.int64) % n
    i1, j1 = (i0 + 1) % n, (j0 + 1) % n
    top = lattice[i0, j0] * (1 - tv) + lattice[i0, j1] * tv
    bot = lattice[i1, j0] * (1 - tv) + lattice[i1, j1] * tv
    return top * (1 - tu) + bot * tu


@dataclass
class SceneObject:
    kind: str
    centre: np.ndarray
    velocity: np.ndarray
    half: np.ndarray
    texture: Texture

    def at(self, t: float) -> np.ndarray:
        """Centre at time ``t`` in [0, 1]; the middle frame is t = 0.5."""
        return self.centre + self.velocity * (2.0 * t - 1.0)


def flat_texture(color) -> Texture:
    c = np.asarray(color, dtype=np.float64)
    return Texture("flat", np.stack([c, c]), np.array([1.0, 0.0]), 1.0, 0.0)


def _random_texture(rng, kinds, scale_range) -> Texture:
    kind = kinds[rng.integers(len(kinds))]
    colors = rng.uniform(0.05, 0.95, size=(2, 3))
    angle = rng.uniform(0, 2 * np.pi)
    lattice = rng.uniform(0.0, 1.0, size=(16, 16)) if kind == "noise" else None
    return Texture(kind, colors, np.array([np.cos(angle), np.sin(angle)]),
                    rng.uniform(*scale_range), rng.uniform(0, 2 * np.pi), lattice)


def _random_velocity(rng, lo, hi) -> np.ndarray:
    mag = rng.uniform(lo, hi)
    angle = rng.uniform(0, 2 * np.pi)
    return mag * np.array([np.sin(angle), np.cos(angle)])


def _sample_scene(cfg: SynthConfig, rng):
    h, w = cfg.height, cfg.width
    background = _random_texture(rng, cfg.textures, cfg.background_scale)
    bg_velocity = _random_velocity(rng, 0.0, cfg.background_displacement)
    objects: List[SceneObject] = []
    occlude = rng.random() < cfg.occlusion_probability
    side = min(h, w)
    for k in range(cfg.shapes):
        half = rng.uniform(*cfg.shape_size, size=2) * side / 2
        if occlude and objects:
            # start on top of an earlier shape so the depth order matters
            anchor = objects[rng.integers(len(objects))].centre
            centre = anchor + rng.uniform(-0.5, 0.5, size=2) * half
        else:
            centre = rng.uniform([0.15 * h, 0.15 * w], [0.85 * h, 0.85 * w])
        velocity = _random_velocity(rng, cfg.min_displacement, cfg.max_displacement)
        kind = SHAPES[rng.integers(len(SHAPES))]
        objects.append(SceneObject(kind, centre, velocity, half, _random_texture(rng, cfg.textures, cfg.texture_scale)))
    return background, bg_velocity, objects


def _coverage(obj: SceneObject, ys: np.ndarray, xs: np.ndarray, centre: np.ndarray) -> np.ndarray:
    """Anti-aliased occupancy from a signed distance with a one-pixel ramp."""
    dy, dx = ys - centre[0], xs - centre[1]
    if obj.kind == "rect":
        sdf = np.maximum(np.abs(dy) - obj.half[0], np.abs(dx) - obj.half[1])
    else:
        r = np.sqrt((dy / obj.half[0]) ** 2 + (dx / obj.half[1]) ** 2)
        sdf = (r - 1.0) * min(obj.half)
    return np.clip(0.5 - sdf, 0.0, 1.0)


def render(cfg: SynthConfig, scene, t: float) -> np.ndarray:
    background, bg_velocity, objects = scene
    ys, xs = np.meshgrid(np.arange(cfg.height, dtype=np.float64) + 0.5,
                         np.arange(cfg.width, dtype=np.float64) + 0.5, indexing="ij")
    shift = bg_velocity * (2.0 * t - 1.0)
    image = np.array(background(ys - shift[0], xs - shift[1]), dtype=np.float64)
    for obj in objects:
        centre = obj.at(t)
        cov = _coverage(obj, ys, xs, centre)
        image = image * (1 - cov) + obj.texture(ys - centre[0], xs - centre[1]) * cov
    return np.clip(image, 0.0, 1.0).astype(np.float32)


def synth_triplet(cfg: SynthConfig, index: int) -> Triplet:
    """Triplet ``index`` of the stream defined by ``cfg``; pure in (cfg, index)."""
    rng = np.random.default_rng([cfg.seed, index])
    scene = _sample_scene(cfg, rng)
    frames = [render(cfg, scene, t) for t in (0.0, 0.5, 1.0)]
    speeds = [np.hypot(*o.velocity) for o in scene[2]] + [np.hypot(*scene[1])]
    meta = {"max_displacement_px": float(max(speeds)),
            "occlusion_flag": bool(cfg.occlusion_probability > 0 and len(scene[2]) > 1)}
    return Triplet(frames[0], frames[1], frames[2], id=f"s{cfg.seed}_{index:06d}", motion_meta=meta)


class SyntheticDataset:
    """Lazily rendered, deterministic sequence of ``n`` triplets."""

    def __init__(self, config: SynthConfig, n: int, offset: int = 0):
        if n < 1:
            raise ConfigError(f"a dataset needs at least one triplet, got {n}")
        self.config = config.validate()
        self.n = int(n)
        self.offset = int(offset)

    def __len__(self) -> int:
        return self.n

    def __getitem__(self, i: int) -> Triplet:
        if not 0 <= i < self.n:
            raise IndexError(i)
        return synth_triplet(self.config, self.offset + i)

    def __iter__(self):
        return (self[i] for i in range(self.n))


def generate_triplets(config: SynthConfig, n: int, offset: int = 0) -> SyntheticDataset:
    return SyntheticDataset(config, n, offset)


def subset(dataset, n: int):
    """First ``n`` items of ``dataset`` as an indexable view."""
    if n < 1:
        raise DataError("subset must contain at least one triplet")
    return _Subset(dataset, min(n, len(dataset)))


class _Subset:
    def __init__(self, base, n):
        self.base, self.n = base, n

    def __len__(self):
        return self.n

    def __getitem__(self, i):
        if not 0 <= i < self.n:
            raise IndexError(i)
        return self.base[i]


# --------------------------------------------------------------- augmentation
def flip_h(tr: Triplet) -> Triplet:
    return replace(tr, frame0=tr.frame0[:, :, ::-1].copy(), frame_gt=tr.frame_gt[:, :, ::-1].copy(),
                   frame1=tr.frame1[:, :, ::-1].copy())


def flip_v(tr: Triplet) -> Triplet:
    return replace(tr, frame0=tr.frame0[:, ::-1].copy(), frame_gt=tr.frame_gt[:, ::-1].copy(),
                   frame1=tr.frame1[:, ::-1].copy())


def reverse(tr: Triplet) -> Triplet:
    return replace(tr, frame0=tr.frame1, frame1=tr.frame0)


def augment(tr: Triplet, seed) -> Triplet:
    """Independent horizontal flip, vertical flip and temporal reversal, each with p = 0.5."""
    rng = np.random.default_rng(seed)
    h, v, r = rng.random(3) < 0.5
    if h:
        tr = flip_h(tr)
    if v:
        tr = flip_v(tr)
    if r:
        tr = reverse(tr)
    return tr


# ------------------------------------------------------------------- batching
def stack(triplets: Sequence[Triplet]):
    """``(frame0, frame_gt, frame1)`` batches shaped (N, 3, H, W)."""
    return tuple(np.stack([getattr(t, name) for t in triplets]) for name in ("frame0", "frame_gt", "frame1"))


def batches(dataset, batch_size: int, seed: int = 0, epoch: int = 0,
            shuffle: bool = True, augment_data: bool = False, drop_last: bool = False) -> Iterator[tuple]:
    """Deterministic mini-batches; order and augmentation depend only on (seed, epoch)."""
    n = len(dataset)
    if n == 0:
        raise DataError("dataset is empty")
    if batch_size < 1:
        raise ConfigError("batch size must be >= 1")
    order = np.random.default_rng([seed, epoch]).permutation(n) if shuffle else np.arange(n)
    for start in range(0, n, batch_size):
        idx = order[start:start + batch_size]
        if drop_last and len(idx) < batch_size:
            break
        items = [dataset[int(i)] for i in idx]
        if augment_data:
            items = [augment(t, [seed, epoch, int(i)]) for t, i in zip(items, idx)]
        yield stack(items)


def prefetch(iterator, depth: int = 2):
    """Produce items on a worker thread through a bounded queue, keeping order."""
    q: "queue.Queue" = queue.Queue(maxsize=max(1, depth))
    done = object()

    def work():
        try:
            for item in iterator:
                q.put(item)
        except BaseException as exc:  # surfaced on the consumer side
            q.put(exc)
        q.put(done)

    threading.Thread(target=work, daemon=True).start()
    while True:
        item = q.get()
        if item is done:
            return
        if isinstance(item, BaseException):
            raise item
        yield item


# ------------------------------------------------------------------- on disk
def write_dataset(dataset, root) -> Path:
    """Store triplets as ``<root>/<id>/f0.ppm, f1.ppm, f2.ppm`` with f1 the middle frame."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    entries = []
    for tr in dataset:
        folder = root / tr.id
        for name, frame in zip(FRAME_NAMES, (tr.frame0, tr.frame_gt, tr.frame1)):
            write_image(frame, folder / name)
        entries.append({"id": tr.id, "motion_meta": tr.motion_meta})
    (root / MANIFEST).write_text(json.dumps({"triplets": entries}, indent=1) + "\n")
    return root


class DirectoryDataset:
    """Triplets stored in the layout written by :func:`write_dataset`."""

    def __init__(self, root):
        self.root = Path(root)
        manifest = self.root / MANIFEST
        if not manifest.exists():
            raise DataError(f"{self.root}: no {MANIFEST}; not a dataset directory")
        try:
            self.entries = json.loads(manifest.read_text())["triplets"]
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise DataError(f"{manifest}: malformed manifest ({exc})") from exc
        if not self.entries:
            raise DataError(f"{manifest}: lists no triplets")

    def __len__(self):
        return len(self.entries)

    def __getitem__(self, i) -> Triplet:
        entry = self.entries[i]
        folder = self.root / entry["id"]
        f0, fg, f1 = (read_image(folder / name) for name in FRAME_NAMES)
        return Triplet(f0, fg, f1, id=entry["id"], motion_meta=entry.get("motion_meta"))


def center_crop16(image: np.ndarray) -> np.ndarray:
    h, w = image.shape[-2:]
    ch, cw = h - h % 16, w - w % 16
    if ch == 0 or cw == 0:
        raise DimensionError(f"image {h}x{w} is smaller than 16 pixels")
    top, left = (h - ch) // 2, (w - cw) // 2
    return image[..., top:top + ch, left:left + cw]


class VimeoTriplets:
    """Vimeo-90K style tree: ``<root>/sequences/<a>/<b>/im1.png, im2.png, im3.png``.

    Frames are center-cropped to extents divisible by 16 (256x448 is kept).
    ``list_file`` names one ``<a>/<b>`` folder per line; without it every
    folder holding the three frames is used.
    """

    def __init__(self, root, list_file: Optional[str] = None):
        self.root = Path(root)
        seq = self.root / "sequences"
        base = seq if seq.is_dir() else self.root
        if list_file:
            lines = (self.root / list_file).read_text().split()
            self.folders = [base / line for line in lines]
        else:
            self.folders = sorted(p.parent for p in base.rglob("im1.png"))
        if not self.folders:
            raise DataError(f"{self.root}: no triplet folders found")

    def __len__(self):
        return len(self.folders)

    def __getitem__(self, i) -> Triplet:
        folder = self.folders[i]
        frames = [center_crop16(read_image(folder / f"im{k}.png")) for k in (1, 2, 3)]
        return Triplet(*frames, id=str(folder.relative_to(self.root)))


def parse_synth_spec(text: str, overrides: Optional[dict] = None) -> Tuple[SynthConfig, int]:
    """``synth:<preset>:<n>[:<seed>]`` to a config and a triplet count."""
    parts = text.split(":")
    if parts[0] != "synth" or len(parts) not in (3, 4):
        raise ConfigError(f"synthetic dataset spec {text!r} must be synth:<preset>:<n>[:<seed>]")
    try:
        n = int(parts[2])
        seed = int(parts[3]) if len(parts) == 4 else None
    except ValueError:
        raise ConfigError(f"synthetic dataset spec {text!r}: count and seed must be integers") from None
    settings = dict(overrides or {})
    for key in ("textures", "shape_size", "texture_scale", "background_scale"):
        if key in settings:
            settings[key] = tuple(settings[key])
    if seed is not None:
        settings["seed"] = seed
    return preset(parts[1], **settings), n


def open_dataset(path, synth_overrides: Optional[dict] = None, offset: int = 0):
    """A dataset directory, a Vimeo-style tree, or a synthetic spec ``synth:<preset>:<n>[:<seed>]``."""
    text = str(path)
    if text.startswith("synth:"):
        cfg, n = parse_synth_spec(text, synth_overrides)
        return SyntheticDataset(cfg, n, offset)
    root = Path(path)
    if not root.exists():
        raise DataError(f"{root}: dataset not found")
    if (root / MANIFEST).exists():
        return DirectoryDataset(root)
    return VimeoTriplets(root)
