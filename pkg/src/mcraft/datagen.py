"""Procedural sprite-video corpus: motion programs, rendering, dataset builders.

Every builder is a pure function of (config, seed). Videos are float32
arrays of shape (F, 3, R, R) in [-1, 1]; on disk each item is a directory
of frame_XXX.png files plus meta.json, with manifest.json at the root.
"""

import hashlib
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from .conditioning import (
    BASE_MOTIONS,
    COLOR_NAMES,
    CUSTOM_MOTIONS,
    MOTION_TOKEN,
    SHAPE_NAMES,
    SUBJECT_TOKEN,
)
from .errors import ConfigurationError, GenerationError, TrackingError

PALETTE = {
    "red": (0.9, -0.7, -0.7),
    "green": (-0.7, 0.8, -0.7),
    "blue": (-0.7, -0.6, 0.9),
    "yellow": (0.9, 0.8, -0.7),
    "magenta": (0.9, -0.6, 0.9),
    "cyan": (-0.7, 0.8, 0.9),
    "orange": (0.9, 0.2, -0.7),
    "white": (0.9, 0.9, 0.9),
}

TEXTURES = ("flat", "striped", "checker")  # checker is reserved for novel subjects

_SUPER = 4  # supersampling factor for anti-aliasing


@dataclass(frozen=True)
class SpriteSpec:
    shape: str
    color: str
    size: float = 0.12  # radius as a fraction of the canvas side
    texture: str = "flat"

    def __post_init__(self):
        if self.shape not in SHAPE_NAMES:
            raise ConfigurationError(f"unknown shape {self.shape!r}")
        if self.color not in PALETTE:
            raise ConfigurationError(f"unknown color {self.color!r}")
        if self.texture not in TEXTURES:
            raise ConfigurationError(f"unknown texture {self.texture!r}")

    def to_dict(self):
        return {"shape": self.shape, "color": self.color,
                "size": self.size, "texture": self.texture}

    @staticmethod
    def from_dict(d):
        return SpriteSpec(**d)


@dataclass(frozen=True)
class MotionProgram:
    """Named trajectory: (frame, n_frames, params, phase) -> (x, y, scale, rot).

    Positions are in normalized canvas coordinates; the renderer checks that
    the sprite stays fully inside the canvas.
    """

    name: str
    trajectory: callable
    param_ranges: dict = field(default_factory=dict)

    def sample_params(self, rng: np.random.Generator) -> dict:
        return {k: float(rng.uniform(lo, hi)) for k, (lo, hi) in self.param_ranges.items()}

    def path(self, n_frames: int, params: dict, phase: float):
        return [self.trajectory(i, n_frames, params, phase) for i in range(n_frames)]


def _frac(i, n):
    return i / max(n - 1, 1)


def _swipe(axis, sign):
    def traj(i, n, p, phase):
        f = _frac(i, n)
        lo = 0.5 - p["span"] / 2
        moving = lo + p["span"] * f if sign > 0 else lo + p["span"] * (1 - f)
        fixed = p["offset"]
        x, y = (fixed, moving) if axis == "y" else (moving, fixed)
        return (x, y, 1.0, 0.0)
    return traj


def _circle(i, n, p, phase):
    a = 2 * math.pi * (_frac(i, n) + phase)
    return (0.5 + p["radius"] * math.cos(a), 0.5 + p["radius"] * math.sin(a), 1.0, 0.0)


def _shake(i, n, p, phase):
    x = 0.5 + p["amp"] * math.sin(2 * math.pi * (2.0 * _frac(i, n) + phase))
    return (x, p["offset"], 1.0, 0.0)


def _zoom_in(i, n, p, phase):
    s = 0.55 + (1.45 - 0.55) * _frac(i, n)
    return (p["cx"], p["cy"], s, 0.0)


def _hold_still(i, n, p, phase):
    return (p["cx"], p["cy"], 1.0, 0.0)


def _figure_eight(i, n, p, phase):
    a = 2 * math.pi * (_frac(i, n) + phase)
    return (0.5 + p["ax"] * math.sin(a), 0.5 + p["ay"] * math.sin(2 * a), 1.0, 0.0)


def _triangle_path(i, n, p, phase):
    f = (_frac(i, n) * 0.999 + phase) % 1.0
    seg, local = int(f * 3), (f * 3) % 1.0
    verts = [
        (0.5 + p["radius"] * math.cos(math.radians(90 + 120 * k)),
         0.5 - p["radius"] * math.sin(math.radians(90 + 120 * k)))
        for k in range(3)
    ]
    x0, y0 = verts[seg]
    x1, y1 = verts[(seg + 1) % 3]
    return (x0 + (x1 - x0) * local, y0 + (y1 - y0) * local, 1.0, 0.0)


def _spiral_out(i, n, p, phase):
    f = _frac(i, n)
    a = 2 * math.pi * (1.5 * f + phase)
    r = 0.03 + (p["radius"] - 0.03) * f
    return (0.5 + r * math.cos(a), 0.5 + r * math.sin(a), 1.0, 0.0)


MOTIONS = {
    "swipe-down": MotionProgram(
        "swipe-down", _swipe("y", +1),
        {"span": (0.40, 0.52), "offset": (0.32, 0.68)}),
    "swipe-up": MotionProgram(
        "swipe-up", _swipe("y", -1),
        {"span": (0.40, 0.52), "offset": (0.32, 0.68)}),
    "swipe-left": MotionProgram(
        "swipe-left", _swipe("x", -1),
        {"span": (0.40, 0.52), "offset": (0.32, 0.68)}),
    "swipe-right": MotionProgram(
        "swipe-right", _swipe("x", +1),
        {"span": (0.40, 0.52), "offset": (0.32, 0.68)}),
    "circle": MotionProgram("circle", _circle, {"radius": (0.20, 0.28)}),
    "shake": MotionProgram(
        "shake", _shake, {"amp": (0.14, 0.22), "offset": (0.35, 0.65)}),
    "zoom-in": MotionProgram(
        "zoom-in", _zoom_in, {"cx": (0.42, 0.58), "cy": (0.42, 0.58)}),
    "hold-still": MotionProgram(
        "hold-still", _hold_still, {"cx": (0.30, 0.70), "cy": (0.30, 0.70)}),
    "figure-eight": MotionProgram(
        "figure-eight", _figure_eight, {"ax": (0.22, 0.30), "ay": (0.12, 0.17)}),
    "triangle-path": MotionProgram(
        "triangle-path", _triangle_path, {"radius": (0.20, 0.28)}),
    "spiral-out": MotionProgram("spiral-out", _spiral_out, {"radius": (0.26, 0.32)}),
}


def _sprite_coverage(shape, cx, cy, radius, rot, size):
    """Anti-aliased coverage mask in [0, 1] at resolution size x size."""
    s = _SUPER * size
    yy, xx = np.mgrid[0:s, 0:s]
    u = (xx + 0.5) / s - cx
    v = (yy + 0.5) / s - cy
    if rot:
        c, sn = math.cos(rot), math.sin(rot)
        u, v = c * u + sn * v, -sn * u + c * v

    def tri(u, v, r, flip=1.0):
        vv = flip * v
        h = r * 0.5
        return (vv >= -h) & (vv <= -math.sqrt(3) * np.abs(u) + r)

    if shape == "circle":
        mask = u * u + v * v <= radius * radius
    elif shape == "ring":
        d2 = u * u + v * v
        mask = (d2 <= radius * radius) & (d2 >= (0.55 * radius) ** 2)
    elif shape == "square":
        a = 0.8 * radius
        mask = (np.abs(u) <= a) & (np.abs(v) <= a)
    elif shape == "triangle":
        mask = tri(u, v, radius)
    elif shape == "star":
        mask = tri(u, v, radius) | tri(u, v, radius, flip=-1.0)
    elif shape == "cross":
        a, b = 0.35 * radius, radius
        mask = ((np.abs(u) <= a) & (np.abs(v) <= b)) | ((np.abs(v) <= a) & (np.abs(u) <= b))
    else:
        raise ConfigurationError(f"unknown shape {shape!r}")
    cov = mask.astype(np.float32).reshape(size, _SUPER, size, _SUPER).mean(axis=(1, 3))
    return cov


def _texture_color(sprite: SpriteSpec, size: int):
    """Per-pixel RGB for the sprite interior, (3, size, size)."""
    base = np.array(PALETTE[sprite.color], dtype=np.float32)[:, None, None]
    img = np.broadcast_to(base, (3, size, size)).copy()
    if sprite.texture == "flat":
        return img
    yy, xx = np.mgrid[0:size, 0:size]
    if sprite.texture == "striped":
        stripe = ((xx // 2) % 2).astype(np.float32)[None]
    else:  # checker
        stripe = (((xx // 2) + (yy // 2)) % 2).astype(np.float32)[None]
    return img * (1 - stripe) + stripe * (0.25 * img - 0.55)


def render_video(sprite: SpriteSpec, motion: MotionProgram, params: dict,
                 n_frames: int, resolution: int, seed: int,
                 phase: float = 0.0) -> np.ndarray:
    """Render one sprite video, deterministic in all arguments."""
    if n_frames < 1:
        raise ConfigurationError(f"need at least one frame, got {n_frames}")
    if resolution not in (32, 64):
        raise ConfigurationError(f"resolution must be 32 or 64, got {resolution}")
    rng = np.random.default_rng(seed)
    tint = rng.uniform(-0.15, 0.15, size=3).astype(np.float32)
    noise = rng.uniform(-0.08, 0.08, size=(3, resolution, resolution)).astype(np.float32)
    background = tint[:, None, None] + noise

    colors = _texture_color(sprite, resolution)
    frames = np.empty((n_frames, 3, resolution, resolution), dtype=np.float32)
    for i in range(n_frames):
        x, y, scale, rot = motion.trajectory(i, n_frames, params, phase)
        r = sprite.size * scale
        if not (r <= x <= 1 - r and r <= y <= 1 - r):
            raise GenerationError(
                f"sprite leaves canvas: motion={motion.name} frame={i} "
                f"pos=({x:.3f},{y:.3f}) radius={r:.3f}"
            )
        cov = _sprite_coverage(sprite.shape, x, y, r, rot, resolution)[None]
        frames[i] = background * (1 - cov) + colors * cov
    return np.clip(frames, -1.0, 1.0)


# ---------------------------------------------------------------------------
# Video array <-> disk


def video_to_uint8(video: np.ndarray) -> np.ndarray:
    return np.clip(np.round((video + 1.0) * 127.5), 0, 255).astype(np.uint8)


def uint8_to_video(arr: np.ndarray) -> np.ndarray:
    return arr.astype(np.float32) / 127.5 - 1.0


def save_video_frames(video: np.ndarray, item_dir: str, gif: bool = False) -> None:
    os.makedirs(item_dir, exist_ok=True)
    arr = video_to_uint8(video)
    images = []
    for i in range(arr.shape[0]):
        img = Image.fromarray(arr[i].transpose(1, 2, 0))
        img.save(os.path.join(item_dir, f"frame_{i:03d}.png"))
        images.append(img)
    if gif:
        images[0].save(os.path.join(item_dir, "preview.gif"), save_all=True,
                       append_images=images[1:], duration=120, loop=0)


def load_video(item_dir: str) -> np.ndarray:
    names = sorted(n for n in os.listdir(item_dir)
                   if n.startswith("frame_") and n.endswith(".png"))
    if not names:
        raise ConfigurationError(f"no frames found in {item_dir}")
    frames = [np.asarray(Image.open(os.path.join(item_dir, n))) for n in names]
    return uint8_to_video(np.stack(frames).transpose(0, 3, 1, 2))


# ---------------------------------------------------------------------------
# Manifests


@dataclass
class DatasetManifest:
    role: str
    root: str
    items: list            # dicts: path, caption, motion, sprite, seed, params, phase
    config: dict
    config_hash: str

    ROLES = ("base-corpus", "custom-motion", "regularization", "appearance",
             "classifier-train", "classifier-test")

    def __post_init__(self):
        if self.role not in self.ROLES:
            raise ConfigurationError(f"unknown dataset role {self.role!r}")

    def __len__(self):
        return len(self.items)

    def classes(self):
        return sorted({it["motion"] for it in self.items if it.get("motion")})

    def item_dir(self, i: int) -> str:
        return os.path.join(self.root, self.items[i]["path"])

    def save(self) -> None:
        path = os.path.join(self.root, "manifest.json")
        with open(path, "w") as f:
            json.dump(
                {"role": self.role, "items": self.items, "config": self.config,
                 "config_hash": self.config_hash},
                f, indent=2, sort_keys=True,
            )

    @staticmethod
    def load(root: str) -> "DatasetManifest":
        with open(os.path.join(root, "manifest.json")) as f:
            d = json.load(f)
        return DatasetManifest(role=d["role"], root=root, items=d["items"],
                               config=d["config"], config_hash=d["config_hash"])


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _sprite_grid(textures=("flat", "striped")):
    return [SpriteSpec(shape=s, color=c, texture=t)
            for t in textures for s in SHAPE_NAMES for c in COLOR_NAMES]


def _render_item(sprite, motion, n_frames, resolution, rng, max_tries=20):
    """Sample params until the sprite stays inside the canvas."""
    for _ in range(max_tries):
        params = motion.sample_params(rng)
        phase = float(rng.uniform(0, 1))
        seed = int(rng.integers(0, 2**31 - 1))
        try:
            video = render_video(sprite, motion, params, n_frames, resolution, seed, phase)
            return video, params, phase, seed
        except GenerationError:
            continue
    raise GenerationError(f"could not place sprite for motion {motion.name!r}")


def _write_item(root, idx, video, caption, motion_name, sprite, seed, params, phase, gif=False):
    rel = os.path.join("items", f"{idx:05d}")
    item_dir = os.path.join(root, rel)
    save_video_frames(video, item_dir, gif=gif)
    meta = {
        "caption": caption, "motion": motion_name, "sprite": sprite.to_dict(),
        "seed": seed, "params": params, "phase": phase,
    }
    with open(os.path.join(item_dir, "meta.json"), "w") as f:
        json.dump(meta, f, indent=2, sort_keys=True)
    return {"path": rel, **meta}


@dataclass
class CorpusConfig:
    n_videos: int = 4000
    frames: int = 8
    resolution: int = 32
    classes: tuple = tuple(BASE_MOTIONS)
    seed: int = 0

    def to_dict(self):
        return {"n_videos": self.n_videos, "frames": self.frames,
                "resolution": self.resolution, "classes": list(self.classes),
                "seed": self.seed}


def motion_caption(sprite: SpriteSpec, motion_word: str) -> str:
    return f"a {sprite.color} {sprite.shape} doing the {motion_word} motion"


def build_base_corpus(root: str, config: CorpusConfig) -> DatasetManifest:
    """Balanced corpus over the base motion classes; custom motions excluded."""
    for cls in config.classes:
        if cls in CUSTOM_MOTIONS:
            raise ConfigurationError(f"custom motion {cls!r} cannot be in the base corpus")
        if cls not in MOTIONS:
            raise ConfigurationError(f"unknown motion class {cls!r}")
    if len(config.classes) < 8:
        raise ConfigurationError("base corpus needs at least 8 motion classes")
    sprites = _sprite_grid()
    if len(sprites) < 10:
        raise ConfigurationError("base corpus needs at least 10 sprite specs")
    rng = np.random.default_rng(config.seed)
    items = []
    for idx in range(config.n_videos):
        motion = MOTIONS[config.classes[idx % len(config.classes)]]
        sprite = sprites[int(rng.integers(len(sprites)))]
        video, params, phase, seed = _render_item(
            sprite, motion, config.frames, config.resolution, rng)
        items.append(_write_item(root, idx, video, motion_caption(sprite, motion.name),
                                 motion.name, sprite, seed, params, phase))
    manifest = DatasetManifest(role="base-corpus", root=root, items=items,
                               config=config.to_dict(),
                               config_hash=config_hash(config.to_dict()))
    manifest.save()
    return manifest


def build_custom_motion_set(root: str, motion_name: str, k: int = 10, seed: int = 0,
                            frames: int = 8, resolution: int = 32) -> DatasetManifest:
    """Exemplar set: k videos of one held-out motion under the V* caption."""
    if motion_name in BASE_MOTIONS:
        raise ConfigurationError(f"{motion_name!r} is a base class, not a custom motion")
    if motion_name not in MOTIONS:
        raise ConfigurationError(f"unknown motion {motion_name!r}")
    if k < 1:
        raise ConfigurationError("need k >= 1 exemplar videos")
    sprites = _sprite_grid()
    if k > len(sprites):
        raise ConfigurationError(f"k={k} exceeds {len(sprites)} distinct sprites")
    rng = np.random.default_rng(seed)
    # round-robin colors first so small sets stay visually diverse
    order = [SpriteSpec(shape=SHAPE_NAMES[(i // len(COLOR_NAMES)) % len(SHAPE_NAMES)],
                        color=COLOR_NAMES[i % len(COLOR_NAMES)],
                        texture=("flat", "striped")[i % 2])
             for i in range(k)]
    motion = MOTIONS[motion_name]
    items = []
    for idx, sprite in enumerate(order):
        video, params, phase, vseed = _render_item(sprite, motion, frames, resolution, rng)
        items.append(_write_item(root, idx, video, motion_caption(sprite, MOTION_TOKEN),
                                 motion_name, sprite, vseed, params, phase))
    cfg = {"motion": motion_name, "k": k, "seed": seed,
           "frames": frames, "resolution": resolution}
    manifest = DatasetManifest(role="custom-motion", root=root, items=items,
                               config=cfg, config_hash=config_hash(cfg))
    manifest.save()
    return manifest


def reg_caption(sprite: SpriteSpec) -> str:
    return f"a {sprite.color} {sprite.shape} doing other motions"


def build_regularization_set(root: str, kind: str, size: int = 100, seed: int = 0,
                             frames: int = 8, resolution: int = 32,
                             base_model=None, classes=None) -> DatasetManifest:
    """Related-motion prior set: real renders, base-model samples, or empty."""
    cfg = {"kind": kind, "size": size, "seed": seed,
           "frames": frames, "resolution": resolution}
    if kind == "none":
        manifest = DatasetManifest(role="regularization", root=root, items=[],
                                   config=cfg, config_hash=config_hash(cfg))
        os.makedirs(root, exist_ok=True)
        manifest.save()
        return manifest
    if kind == "real":
        classes = list(classes or BASE_MOTIONS)
        for cls in classes:
            if cls in CUSTOM_MOTIONS:
                raise ConfigurationError(f"custom motion {cls!r} cannot regularize")
        rng = np.random.default_rng(seed)
        sprites = _sprite_grid()
        items = []
        for idx in range(size):
            motion = MOTIONS[classes[idx % len(classes)]]
            sprite = sprites[int(rng.integers(len(sprites)))]
            video, params, phase, vseed = _render_item(sprite, motion, frames, resolution, rng)
            items.append(_write_item(root, idx, video, reg_caption(sprite),
                                     motion.name, sprite, vseed, params, phase))
        manifest = DatasetManifest(role="regularization", root=root, items=items,
                                   config=cfg, config_hash=config_hash(cfg))
        manifest.save()
        return manifest
    if kind == "synthetic":
        if base_model is None:
            raise ConfigurationError("synthetic regularization needs a pretrained base model")
        # deferred import: sampling depends on torch, datagen otherwise does not
        from .sampling import synthesize_regularization_items
        items = synthesize_regularization_items(root, base_model, size, seed,
                                                frames, resolution)
        manifest = DatasetManifest(role="regularization", root=root, items=items,
                                   config=cfg, config_hash=config_hash(cfg))
        manifest.save()
        return manifest
    raise ConfigurationError(f"unknown regularization kind {kind!r}")


def build_appearance_set(root: str, subject: SpriteSpec, m: int = 5,
                         seed: int = 0, resolution: int = 32) -> DatasetManifest:
    """Still-image exemplars (one-frame videos) for a novel subject X*."""
    base_combos = {(s.shape, s.color, s.texture) for s in _sprite_grid()}
    if (subject.shape, subject.color, subject.texture) in base_combos:
        raise ConfigurationError(
            "appearance subject must differ from every base-corpus sprite "
            "(use the reserved checker texture or a novel combination)"
        )
    rng = np.random.default_rng(seed)
    captions = [f"a {SUBJECT_TOKEN} sprite", f"a close-up of a {SUBJECT_TOKEN} sprite"]
    hold = MOTIONS["hold-still"]
    items = []
    for idx in range(m):
        close = idx % 2 == 1
        params = {"cx": float(rng.uniform(0.35, 0.65)), "cy": float(rng.uniform(0.35, 0.65))}
        sprite = SpriteSpec(subject.shape, subject.color,
                            size=subject.size * (1.6 if close else 1.0),
                            texture=subject.texture)
        vseed = int(rng.integers(0, 2**31 - 1))
        video = render_video(sprite, hold, params, 1, resolution, vseed)
        items.append(_write_item(root, idx, video, captions[close], "", sprite,
                                 vseed, params, 0.0))
    cfg = {"subject": subject.to_dict(), "m": m, "seed": seed, "resolution": resolution}
    manifest = DatasetManifest(role="appearance", root=root, items=items,
                               config=cfg, config_hash=config_hash(cfg))
    manifest.save()
    return manifest


def build_classifier_sets(train_root: str, test_root: str, per_class_train: int = 220,
                          per_class_test: int = 50, seed: int = 0, frames: int = 8,
                          resolution: int = 32, classes=None):
    """Labeled splits over all motion classes for the metric classifier."""
    classes = list(classes or (BASE_MOTIONS + CUSTOM_MOTIONS))
    sprites = _sprite_grid(textures=TEXTURES)
    out = []
    for role, root, per_class, split_seed in (
        ("classifier-train", train_root, per_class_train, seed),
        ("classifier-test", test_root, per_class_test, seed + 104729),
    ):
        rng = np.random.default_rng(split_seed)
        items = []
        idx = 0
        for cls in classes:
            motion = MOTIONS[cls]
            for _ in range(per_class):
                sprite = sprites[int(rng.integers(len(sprites)))]
                video, params, phase, vseed = _render_item(
                    sprite, motion, frames, resolution, rng)
                items.append(_write_item(root, idx, video,
                                         motion_caption(sprite, cls), cls,
                                         sprite, vseed, params, phase))
                idx += 1
        cfg = {"classes": classes, "per_class": per_class, "seed": split_seed,
               "frames": frames, "resolution": resolution}
        manifest = DatasetManifest(role=role, root=root, items=items,
                                   config=cfg, config_hash=config_hash(cfg))
        manifest.save()
        out.append(manifest)
    return tuple(out)


# ---------------------------------------------------------------------------
# Augmentation


@dataclass(frozen=True)
class AugmentConfig:
    translate_frac: float = 0.10   # max shift as fraction of resolution
    brightness: float = 0.10      # multiplicative jitter range
    hue: float = 0.35             # rotation around the gray axis, radians

    def disabled(self) -> bool:
        return self.translate_frac == 0 and self.brightness == 0 and self.hue == 0


def augment(video: np.ndarray, seed: int, config: AugmentConfig = AugmentConfig()) -> np.ndarray:
    """Spatial/color jitter shared across frames; never flips or per-frame jitter."""
    if config.disabled():
        return video.copy()
    rng = np.random.default_rng(seed)
    res = video.shape[-1]
    max_shift = int(round(config.translate_frac * res))
    dx = int(rng.integers(-max_shift, max_shift + 1)) if max_shift else 0
    dy = int(rng.integers(-max_shift, max_shift + 1)) if max_shift else 0
    out = video
    if dx or dy:
        pad = max(abs(dx), abs(dy))
        padded = np.pad(out, ((0, 0), (0, 0), (pad, pad), (pad, pad)), mode="edge")
        out = padded[:, :, pad + dy: pad + dy + res, pad + dx: pad + dx + res]
    gain = 1.0 + float(rng.uniform(-config.brightness, config.brightness))
    angle = float(rng.uniform(-config.hue, config.hue))
    out = out * gain
    if angle:
        out = _rotate_hue(out, angle)
    return np.clip(out, -1.0, 1.0).astype(np.float32)


def _rotate_hue(video: np.ndarray, angle: float) -> np.ndarray:
    """Rodrigues rotation of RGB vectors around the (1,1,1) axis."""
    k = np.ones(3) / math.sqrt(3)
    c, s = math.cos(angle), math.sin(angle)
    kcross = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    rot = c * np.eye(3) + s * kcross + (1 - c) * np.outer(k, k)
    return np.einsum("ij,fjhw->fihw", rot.astype(np.float32), video)


# ---------------------------------------------------------------------------
# Centroid oracle


def centroid_track(video: np.ndarray, threshold: float = 0.25) -> list:
    """Per-frame intensity-weighted centroid (x, y) of the foreground, in pixels."""
    pts = []
    for frame in video:
        median = np.median(frame.reshape(3, -1), axis=1)[:, None, None]
        dev = np.sqrt(((frame - median) ** 2).sum(axis=0))
        mask = dev > threshold
        if not mask.any():
            raise TrackingError("no foreground pixels above contrast threshold")
        w = dev * mask
        total = w.sum()
        yy, xx = np.mgrid[0: frame.shape[1], 0: frame.shape[2]]
        pts.append((float((w * xx).sum() / total), float((w * yy).sum() / total)))
    return pts


def foreground_areas(video: np.ndarray, threshold: float = 0.25) -> list:
    """Per-frame count of foreground pixels; grows under zoom-in."""
    areas = []
    for frame in video:
        median = np.median(frame.reshape(3, -1), axis=1)[:, None, None]
        dev = np.sqrt(((frame - median) ** 2).sum(axis=0))
        areas.append(int((dev > threshold).sum()))
    return areas


def _strictly_monotone(vals, sign) -> bool:
    return all(sign * (b - a) > 0 for a, b in zip(vals, vals[1:]))


def motion_predicate(name: str, video: np.ndarray) -> bool:
    """Ground-truth geometric check that a video exhibits its motion class."""
    pts = centroid_track(video)
    xs = [p[0] for p in pts]
    ys = [p[1] for p in pts]
    res = video.shape[-1]
    cx = cy = (res - 1) / 2
    if name == "swipe-down":
        return _strictly_monotone(ys, +1)
    if name == "swipe-up":
        return _strictly_monotone(ys, -1)
    if name == "swipe-left":
        return _strictly_monotone(xs, -1)
    if name == "swipe-right":
        return _strictly_monotone(xs, +1)
    if name == "circle":
        radii = [math.hypot(x - cx, y - cy) for x, y in pts]
        mean = sum(radii) / len(radii)
        return mean > 0.1 * res and all(abs(r - mean) <= 0.1 * mean for r in radii)
    if name == "shake":
        span_x = max(xs) - min(xs)
        span_y = max(ys) - min(ys)
        return span_x > 0.15 * res and span_y < 0.5 * span_x
    if name == "zoom-in":
        areas = foreground_areas(video)
        return _strictly_monotone(areas, +1)
    if name == "hold-still":
        return max(math.hypot(x - xs[0], y - ys[0]) for x, y in pts) < 0.5
    if name == "figure-eight":
        # two lobes: x sweeps both sides while y oscillates twice as fast
        crossings = sum(1 for a, b in zip(xs, xs[1:]) if (a - cx) * (b - cx) < 0)
        return crossings >= 1 and max(xs) - min(xs) > 0.25 * res
    if name == "triangle-path":
        radii = [math.hypot(x - cx, y - cy) for x, y in pts]
        return max(xs) - min(xs) > 0.15 * res and max(radii) > 0.12 * res
    if name == "spiral-out":
        radii = [math.hypot(x - cx, y - cy) for x, y in pts]
        return radii[-1] > radii[0] + 0.1 * res
    raise ConfigurationError(f"no predicate for motion {name!r}")
