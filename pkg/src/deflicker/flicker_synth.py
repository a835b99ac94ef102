"""Synthetic flicker: ``I_t = G_t + F_t`` with artifacts shared by W-frame blocks."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .media_io import validate_video

PRESETS = {"w1": 1, "w3": 3, "w10": 10}


@dataclass(frozen=True)
class FlickerSpec:
    seed: int = 0
    window_size: int = 1
    mode: str = "global"
    gain_range: tuple[float, float] = (0.7, 1.3)
    offset_range: tuple[float, float] = (-0.15, 0.15)
    local_blob_count: int = 3
    local_sigma: float = 8.0

    def __post_init__(self):
        object.__setattr__(self, "gain_range", tuple(float(v) for v in self.gain_range))
        object.__setattr__(self, "offset_range", tuple(float(v) for v in self.offset_range))
        glo, ghi = self.gain_range
        olo, ohi = self.offset_range
        if self.window_size < 1:
            raise ValueError("window_size must be >= 1")
        if self.mode not in ("global", "local"):
            raise ValueError(f"mode must be 'global' or 'local', got {self.mode!r}")
        if not (0.0 < glo <= ghi <= 2.0):
            raise ValueError(f"gain_range must satisfy 0 < lo <= hi <= 2, got {self.gain_range}")
        if not (-0.5 <= olo <= ohi <= 0.5):
            raise ValueError(f"offset_range must lie in [-0.5, 0.5] with lo <= hi, got {self.offset_range}")
        if self.local_blob_count < 0:
            raise ValueError("local_blob_count must be >= 0")
        if self.local_sigma <= 0:
            raise ValueError("local_sigma must be positive")

    @classmethod
    def from_preset(cls, name: str, **overrides) -> "FlickerSpec":
        if name not in PRESETS:
            raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
        return cls(window_size=PRESETS[name], **overrides)

    @classmethod
    def from_dict(cls, d: dict) -> "FlickerSpec":
        d = {k: v for k, v in d.items() if k != "preset"}
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["gain_range"] = list(self.gain_range)
        d["offset_range"] = list(self.offset_range)
        return d


@dataclass
class BlockParams:
    """Random draws for one W-block of frames."""

    block_index: int
    gain: float = 1.0
    offset: float = 0.0
    blobs: list[tuple[float, float, float]] = field(default_factory=list)  # (cx, cy, amplitude)

    def to_dict(self) -> dict:
        return {"block_index": self.block_index, "gain": self.gain, "offset": self.offset,
                "blobs": [list(b) for b in self.blobs]}


def block_rng(seed: int, block_index: int) -> np.random.Generator:
    # Philox is counter-based: each block's stream depends only on (seed, block)
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(block_index)])))


def block_params(spec: FlickerSpec, block_index: int, height: int, width: int) -> BlockParams:
    rng = block_rng(spec.seed, block_index)
    p = BlockParams(block_index)
    if spec.mode == "global":
        p.gain = float(rng.uniform(*spec.gain_range))
        p.offset = float(rng.uniform(*spec.offset_range))
    else:
        for _ in range(spec.local_blob_count):
            cx = float(rng.uniform(0, width - 1))
            cy = float(rng.uniform(0, height - 1))
            amp = float(rng.uniform(*spec.offset_range))
            p.blobs.append((cx, cy, amp))
    return p


def block_index_for(frame_index: int, window_size: int) -> int:
    """0-based frame index -> block index; frames 0..W-1 share block 0."""
    return frame_index // window_size


def synthesize_artifact_field(spec: FlickerSpec, block_index: int, clean: np.ndarray) -> np.ndarray:
    """Additive field ``F`` such that the flickered frame is ``clean + F`` (before clamping).

    Global mode realizes ``g * G + b`` as ``F = (g - 1) * G + b``; local
    mode sums Gaussian bumps and ignores ``clean`` except for its shape.
    """
    clean = np.asarray(clean, dtype=np.float64)
    if clean.ndim != 3 or clean.shape[0] == 0 or clean.shape[1] == 0:
        raise ValueError(f"clean frame must be non-empty (H, W, 3), got {clean.shape}")
    h, w = clean.shape[:2]
    p = block_params(spec, block_index, h, w)
    if spec.mode == "global":
        return (p.gain - 1.0) * clean + p.offset
    return np.repeat(_blob_field(p.blobs, h, w, spec.local_sigma)[..., None], 3, axis=2)


def _blob_field(blobs, h: int, w: int, sigma: float) -> np.ndarray:
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    field_ = np.zeros((h, w))
    for cx, cy, amp in blobs:
        field_ += amp * np.exp(-((xs - cx) ** 2 + (ys - cy) ** 2) / (2.0 * sigma ** 2))
    return field_


def apply_flicker(clean: np.ndarray, spec: FlickerSpec) -> np.ndarray:
    clean = validate_video(clean)
    out = np.empty(clean.shape, dtype=np.float32)
    cache: dict[int, BlockParams] = {}
    h, w = clean.shape[1:3]
    for t, frame in enumerate(clean):
        b = block_index_for(t, spec.window_size)
        g = frame.astype(np.float64)
        if spec.mode == "global":
            if b not in cache:
                cache[b] = block_params(spec, b, h, w)
            p = cache[b]
            noisy = g + ((p.gain - 1.0) * g + p.offset)
        else:
            noisy = g + synthesize_artifact_field(spec, b, g)
        out[t] = np.clip(noisy, 0.0, 1.0)
    return out


def invert_flicker(flickered: np.ndarray, spec: FlickerSpec) -> np.ndarray:
    """Undo :func:`apply_flicker` exactly where nothing clamped."""
    flickered = validate_video(flickered)
    h, w = flickered.shape[1:3]
    out = np.empty(flickered.shape, dtype=np.float64)
    for t, frame in enumerate(flickered.astype(np.float64)):
        p = block_params(spec, block_index_for(t, spec.window_size), h, w)
        if spec.mode == "global":
            out[t] = (frame - p.offset) / p.gain
        else:
            out[t] = frame - _blob_field(p.blobs, h, w, spec.local_sigma)[..., None]
    return out


def num_blocks(frame_count: int, window_size: int) -> int:
    return -(-frame_count // window_size)


def flicker_manifest(spec: FlickerSpec, frame_count: int, height: int, width: int) -> dict:
    blocks = [block_params(spec, b, height, width).to_dict()
              for b in range(num_blocks(frame_count, spec.window_size))]
    return {"spec": spec.to_dict(), "frame_count": frame_count, "num_blocks": len(blocks), "blocks": blocks}
