"""PNG frame-directory I/O.

Frames are float32 arrays of shape (H, W, 3) in [0, 1]; a video is a
float32 array of shape (T, H, W, 3).
"""

from __future__ import annotations

import hashlib
from pathlib import Path

import numpy as np
from PIL import Image

IMAGE_SUFFIXES = (".png",)


class MediaError(ValueError):
    pass


def quantize(values: np.ndarray) -> np.ndarray:
    """Clamp to [0, 1] and round half away from zero to uint8."""
    v = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0) * 255.0
    return np.floor(v + 0.5).astype(np.uint8)


def dequantize(values: np.ndarray) -> np.ndarray:
    return values.astype(np.float32) / np.float32(255.0)


def validate_frame(frame: np.ndarray) -> np.ndarray:
    frame = np.asarray(frame)
    if frame.ndim != 3 or frame.shape[2] != 3:
        raise MediaError(f"frame must have shape (H, W, 3), got {frame.shape}")
    if not np.isfinite(frame).all():
        raise MediaError("frame contains non-finite values")
    return frame


def validate_video(video: np.ndarray) -> np.ndarray:
    video = np.asarray(video)
    if video.ndim != 4 or video.shape[3] != 3:
        raise MediaError(f"video must have shape (T, H, W, 3), got {video.shape}")
    if video.shape[0] < 1:
        raise MediaError("video has no frames")
    if not np.isfinite(video).all():
        raise MediaError("video contains non-finite values")
    return video


def list_frame_files(dir_path: str | Path) -> list[Path]:
    d = Path(dir_path)
    if not d.is_dir():
        raise MediaError(f"frame directory not found: {d}")
    return sorted(p for p in d.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def load_frame(path: str | Path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"))
    except Exception as exc:  # PIL raises a zoo of types
        raise MediaError(f"cannot decode {path}: {exc}") from exc
    return dequantize(arr)


def load_frame_sequence(dir_path: str | Path) -> np.ndarray:
    files = list_frame_files(dir_path)
    if not files:
        raise MediaError(f"no PNG frames in {dir_path}")
    frames = [load_frame(f) for f in files]
    shape = frames[0].shape
    for f, fr in zip(files, frames):
        if fr.shape != shape:
            raise MediaError(f"dimension mismatch: {f.name} is {fr.shape[:2]}, expected {shape[:2]}")
    return np.stack(frames)


def save_frame(frame: np.ndarray, path: str | Path) -> None:
    Image.fromarray(quantize(validate_frame(frame)), mode="RGB").save(path)


def save_frame_sequence(video: np.ndarray, dir_path: str | Path) -> int:
    video = np.asarray(video)
    if video.ndim != 4 or video.shape[0] == 0:
        raise MediaError("cannot save an empty video")
    validate_video(video)
    d = Path(dir_path)
    d.mkdir(parents=True, exist_ok=True)
    for i, frame in enumerate(video):
        save_frame(frame, d / f"{i:05d}.png")
    return len(video)


def video_checksum(video: np.ndarray) -> str:
    """sha256 over the quantized bytes, so it matches what lands on disk."""
    h = hashlib.sha256()
    h.update(np.asarray(video.shape, dtype="<u4").tobytes())
    h.update(quantize(video).tobytes())
    return h.hexdigest()


def directory_checksum(dir_path: str | Path) -> str:
    h = hashlib.sha256()
    for f in list_frame_files(dir_path):
        h.update(f.name.encode())
        h.update(f.read_bytes())
    return h.hexdigest()
