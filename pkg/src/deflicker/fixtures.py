"""Bundled desk-scale assets.

``generate_fixtures`` rebuilds, deterministically from one seed:

* ``corpus/train`` and ``corpus/holdout`` — 80x80 crops of the sample
  photographs shipped with scikit-image plus procedural textures, used to
  train and validate the filter;
* ``clips/<name>/`` — clean procedural clips (static scene, translating
  sprite, rotating texture);
* ``flicker/<name>/{clean,input}`` — synthetic flicker fixtures with a
  ``manifest.json`` of the FlickerSpec, per-block parameters, checksums and
  expected metric values;
* ``manifest.json`` — checksums of everything above.

Pretrained checkpoints live in ``checkpoints/`` and are produced by the
training commands, not by this module.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .flicker_synth import FlickerSpec, apply_flicker, flicker_manifest
from .media_io import directory_checksum, load_frame_sequence, save_frame_sequence
from .metrics import psnr, warp_error_video
from .optical_flow import FlowProvider

DEFAULT_SEED = 2024
CROP = 80
CLIP_SIZE = 64

# sample photographs from scikit-image; the holdout sources never feed training
TRAIN_SOURCES = ("astronaut", "coffee", "rocket", "immunohistochemistry", "retina",
                 "hubble_deep_field", "brick", "grass", "gravel", "moon", "text")
HOLDOUT_SOURCES = ("chelsea", "camera", "coins")


@dataclass(frozen=True)
class FlickerFixture:
    name: str
    clip: str
    frames: int
    preset: str
    mode: str = "global"


FLICKER_FIXTURES = (
    FlickerFixture("static_w1", "static", 20, "w1"),
    FlickerFixture("sprite_w1", "sprite", 20, "w1"),
    FlickerFixture("sprite_w3", "sprite", 20, "w3"),
    FlickerFixture("sprite_w10", "sprite", 40, "w10"),
    FlickerFixture("rotate_local_w1", "rotate", 20, "w1", mode="local"),
)


def _source_image(name: str, rng: np.random.Generator) -> np.ndarray:
    from skimage import data

    img = np.asarray(getattr(data, name)(), dtype=np.float64)
    img = img / 255.0 if img.max() > 1.0 else img
    if img.ndim == 2:
        # tint grayscale sources so the corpus is not colour-free
        tint = rng.uniform(0.75, 1.0, size=3)
        img = img[..., None] * tint
    return np.clip(img[..., :3], 0.0, 1.0)


def _downscale(img: np.ndarray, factor: int) -> np.ndarray:
    if factor <= 1:
        return img
    h, w = (img.shape[0] // factor) * factor, (img.shape[1] // factor) * factor
    return img[:h, :w].reshape(h // factor, factor, w // factor, factor, 3).mean(axis=(1, 3))


def _random_crops(img: np.ndarray, n: int, rng: np.random.Generator) -> list[np.ndarray]:
    out = []
    for _ in range(n):
        factor = int(rng.integers(1, 4))
        small = _downscale(img, factor)
        if min(small.shape[:2]) < CROP:
            small = img
        y = int(rng.integers(0, small.shape[0] - CROP + 1))
        x = int(rng.integers(0, small.shape[1] - CROP + 1))
        out.append(small[y:y + CROP, x:x + CROP])
    return out


def procedural_texture(rng: np.random.Generator, size: int) -> np.ndarray:
    """Smooth colour gradient + blurred noise + a few discs and a checker patch."""
    ys, xs = np.mgrid[0:size, 0:size] / (size - 1)
    c0, c1, c2 = rng.uniform(0.15, 0.85, size=(3, 3))
    img = c0 + (c1 - c0) * xs[..., None] + (c2 - c0) * ys[..., None] * 0.5
    noise = ndimage.gaussian_filter(rng.normal(size=(size, size, 3)), (1.2, 1.2, 0))
    img = img + 0.12 * noise / (noise.std() + 1e-12)
    for _ in range(int(rng.integers(2, 5))):
        cx, cy = rng.uniform(0, size, size=2)
        r = rng.uniform(size / 12, size / 5)
        disc = np.clip(r - np.hypot(xs * (size - 1) - cx, ys * (size - 1) - cy) + 0.5, 0, 1)
        img = img + disc[..., None] * (rng.uniform(0.05, 0.95, size=3) - img)
    cell = int(rng.integers(3, 7))
    x0, y0 = rng.integers(0, size // 2, size=2)
    patch = ((np.arange(size // 3)[:, None] // cell + np.arange(size // 3)[None] // cell) % 2).astype(float)
    region = img[y0:y0 + size // 3, x0:x0 + size // 3]
    region += (0.35 * (patch[:region.shape[0], :region.shape[1]] - 0.5))[..., None]
    return np.clip(img, 0.0, 1.0)


def build_corpus(seed: int = DEFAULT_SEED, per_train_source: int = 14, per_holdout_source: int = 17,
                 procedural: int = 46) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """(train crops, holdout crops), each (CROP, CROP, 3) float64 in [0, 1]."""
    rng = np.random.default_rng([seed, 11])
    train: list[np.ndarray] = []
    for name in TRAIN_SOURCES:
        train += _random_crops(_source_image(name, rng), per_train_source, rng)
    train += [procedural_texture(rng, CROP) for _ in range(procedural)]
    holdout: list[np.ndarray] = []
    for name in HOLDOUT_SOURCES:
        holdout += _random_crops(_source_image(name, rng), per_holdout_source, rng)
    return train, holdout


# -- clean clips ---------------------------------------------------------------

def static_clip(frames: int, seed: int = DEFAULT_SEED) -> np.ndarray:
    scene = procedural_texture(np.random.default_rng([seed, 21]), CLIP_SIZE)
    return np.repeat(scene[None], frames, axis=0)


def _sprite(size: int, rng: np.random.Generator):
    ys, xs = np.mgrid[0:size, 0:size] - (size - 1) / 2
    r = np.hypot(xs, ys)
    alpha = np.clip(size / 2 - 0.5 - r, 0, 1)
    stripes = 0.5 + 0.5 * np.sin(xs * 0.9 + ys * 0.4)
    base = rng.uniform(0.1, 0.9, size=3)
    color = base * (0.6 + 0.4 * stripes[..., None])
    return alpha, color


def sprite_clip(frames: int, seed: int = DEFAULT_SEED, speed: float = 0.8) -> np.ndarray:
    """A striped disc translating over a static textured background (sub-pixel motion)."""
    rng = np.random.default_rng([seed, 22])
    bg = procedural_texture(rng, CLIP_SIZE)
    s = 18
    alpha, color = _sprite(s, rng)
    direction = np.array([1.0, 0.45]) / np.hypot(1.0, 0.45)
    out = []
    for t in range(frames):
        # bounce inside the frame along a fixed direction
        travel = (t * speed) % (2 * (CLIP_SIZE - s - 8))
        pos = travel if travel <= CLIP_SIZE - s - 8 else 2 * (CLIP_SIZE - s - 8) - travel
        ox, oy = 4 + pos * direction[0], 4 + pos * direction[1] * 1.5
        a = ndimage.shift(np.pad(alpha, ((0, CLIP_SIZE - s), (0, CLIP_SIZE - s))), (oy, ox), order=1)
        c = np.stack([ndimage.shift(np.pad(color[..., k], ((0, CLIP_SIZE - s), (0, CLIP_SIZE - s))), (oy, ox), order=1)
                      for k in range(3)], -1)
        a = np.clip(a, 0, 1)[..., None]
        out.append(bg * (1 - a) + c * a)
    return np.clip(np.stack(out), 0, 1)


def rotate_clip(frames: int, seed: int = DEFAULT_SEED, degrees_per_frame: float = 1.5) -> np.ndarray:
    """A texture rotating about the frame centre."""
    big = procedural_texture(np.random.default_rng([seed, 23]), 2 * CLIP_SIZE)
    lo = CLIP_SIZE // 2
    out = []
    for t in range(frames):
        rot = ndimage.rotate(big, t * degrees_per_frame, axes=(1, 0), reshape=False, order=1, mode="reflect")
        out.append(rot[lo:lo + CLIP_SIZE, lo:lo + CLIP_SIZE])
    return np.clip(np.stack(out), 0, 1)


CLIPS = {"static": static_clip, "sprite": sprite_clip, "rotate": rotate_clip}


# -- generation ------------------------------------------------------------------

def _metrics_entry(video: np.ndarray, ref_flows: FlowProvider, clean: np.ndarray | None) -> dict:
    entry = {
        "warp_error_reference_flow": warp_error_video(video, ref_flows).mean_warp_error,
        "warp_error_self_flow": warp_error_video(video, FlowProvider(video)).mean_warp_error,
    }
    if clean is not None:
        entry["psnr_vs_clean"] = psnr(video, clean)
    return entry


def generate_fixtures(root: str | Path, seed: int = DEFAULT_SEED, verify: bool = False) -> dict:
    """Regenerate every data fixture under ``root``; returns the top-level manifest.

    With ``verify=True`` nothing is rewritten: the freshly generated data is
    compared against the committed checksums and a ``ValueError`` listing
    every drifting entry is raised on mismatch.
    """
    root = Path(root)
    checksums: dict[str, str] = {}
    pending: list[tuple[Path, np.ndarray]] = []

    train, holdout = build_corpus(seed)
    for split, crops in (("train", train), ("holdout", holdout)):
        video = np.stack(crops).astype(np.float32)
        pending.append((root / "corpus" / split, video))

    clips = {}
    for name, fn in CLIPS.items():
        clips[name] = fn(40, seed).astype(np.float32)
        pending.append((root / "clips" / name, clips[name][:20]))

    fixture_manifests = {}
    for fx in FLICKER_FIXTURES:
        spec = FlickerSpec.from_preset(fx.preset, seed=seed + sum(map(ord, fx.name)), mode=fx.mode)
        clean = clips[fx.clip][:fx.frames]
        pending.append((root / "flicker" / fx.name / "clean", clean))
        pending.append((root / "flicker" / fx.name / "input", apply_flicker(clean, spec)))
        fixture_manifests[fx.name] = (fx, spec)

    # quantize through PNG so recorded values match what loaders see
    from tempfile import TemporaryDirectory

    stable: dict[Path, np.ndarray] = {}
    with TemporaryDirectory() as tmp:
        for i, (path, video) in enumerate(pending):
            d = Path(tmp) / str(i)
            save_frame_sequence(video, d)
            stable[path] = load_frame_sequence(d)
            checksums[str(path.relative_to(root))] = directory_checksum(d)

    if verify:
        committed = json.loads((root / "manifest.json").read_text())["checksums"]
        drift = sorted(k for k in checksums if committed.get(k) != checksums[k])
        if drift:
            raise ValueError(f"fixture drift detected in: {drift}")
        return json.loads((root / "manifest.json").read_text())

    for path, video in stable.items():
        if path.exists():
            for f in path.glob("*.png"):
                f.unlink()
        save_frame_sequence(video, path)

    for name, (fx, spec) in fixture_manifests.items():
        base = root / "flicker" / name
        clean = stable[base / "clean"]
        inp = stable[base / "input"]
        ref = FlowProvider(clean)
        man = {
            "fixture": name,
            "source": f"procedural '{fx.clip}' clip, {fx.frames} frames of {CLIP_SIZE}x{CLIP_SIZE}",
            "flicker": flicker_manifest(spec, fx.frames, CLIP_SIZE, CLIP_SIZE),
            "checksums": {"clean": checksums[f"flicker/{name}/clean"], "input": checksums[f"flicker/{name}/input"]},
            "expected": {
                "clean": {**_metrics_entry(clean, ref, None), "provenance": "computed at generation"},
                "input": {**_metrics_entry(inp, ref, clean), "provenance": "computed at generation"},
            },
        }
        (base / "manifest.json").write_text(json.dumps(man, indent=2, sort_keys=True) + "\n")

    top = {"seed": seed, "checksums": checksums,
           "fixtures": [fx.name for fx in FLICKER_FIXTURES], "clips": sorted(CLIPS)}
    (root / "manifest.json").write_text(json.dumps(top, indent=2, sort_keys=True) + "\n")
    return top


def fixtures_root() -> Path:
    """``$DEFLICKER_FIXTURES`` or the ``fixtures/`` directory of a source checkout."""
    env = os.environ.get("DEFLICKER_FIXTURES")
    return Path(env) if env else Path(__file__).resolve().parents[2] / "fixtures"


def load_corpus(root: str | Path, split: str = "train") -> list[np.ndarray]:
    return list(load_frame_sequence(Path(root) / "corpus" / split))


def pan_clips(corpus: list[np.ndarray], count: int, frames: int = 8, size: int = 64,
              seed: int = DEFAULT_SEED, max_speed: float = 1.5) -> list[np.ndarray]:
    """Clean clips of a ``size`` window panning over corpus images at sub-pixel speed."""
    rng = np.random.default_rng([seed, 31])
    clips = []
    for i in range(count):
        img = np.asarray(corpus[int(rng.integers(0, len(corpus)))], dtype=np.float64)
        h, w = img.shape[:2]
        room_y, room_x = h - size, w - size
        vx = float(rng.uniform(-1, 1) * min(max_speed, room_x / max(frames - 1, 1)))
        vy = float(rng.uniform(-1, 1) * min(max_speed, room_y / max(frames - 1, 1)))
        x0 = rng.uniform(max(0.0, -vx * (frames - 1)), room_x - max(0.0, vx * (frames - 1)))
        y0 = rng.uniform(max(0.0, -vy * (frames - 1)), room_y - max(0.0, vy * (frames - 1)))
        ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
        clip = []
        for t in range(frames):
            coords = [ys + y0 + vy * t, xs + x0 + vx * t]
            clip.append(np.stack([ndimage.map_coordinates(img[..., c], coords, order=1, mode="nearest")
                                  for c in range(3)], -1))
        clips.append(np.clip(np.stack(clip), 0, 1).astype(np.float32))
    return clips


def refiner_training_pairs(corpus: list[np.ndarray], count: int, frames: int = 8, size: int = 64,
                           seed: int = DEFAULT_SEED,
                           clean_fraction: float = 0.0) -> list[tuple[np.ndarray, np.ndarray]]:
    """(clean, locally flickered) pan clips for refiner training.

    A ``clean_fraction`` of the pairs are left unflickered so the refiner
    also sees consistent input, for which the identity is optimal.
    """
    if not 0.0 <= clean_fraction <= 1.0:
        raise ValueError("clean_fraction must lie in [0, 1]")
    keep_clean = np.random.default_rng([seed, 43]).random(count) < clean_fraction
    out = []
    for i, clean in enumerate(pan_clips(corpus, count, frames, size, seed)):
        if keep_clean[i]:
            out.append((clean, clean.copy()))
            continue
        spec = FlickerSpec(seed=int(np.random.SeedSequence([seed, 41, i]).generate_state(1)[0]),
                           window_size=1, mode="local")
        out.append((clean, apply_flicker(clean, spec)))
    return out
