"""Neural filtering: a conv net F that takes structure from one frame and
appearance from another.

F is trained on single images.  Each training pair is built from a clean
image X: the first input has its appearance distorted (colour, saturation,
brightness) and the second has its structure distorted (elastic warp and
blurred occluding blobs).  F(τ_a(X), τ_s(X)) is regressed onto X, so at run
time feeding a flickering frame and its atlas reconstruction yields a frame
with the input's structure and the atlas's (consistent) appearance.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .nn import tensor as T
from .nn.checkpoint import load_checkpoint, save_checkpoint
from .nn.layers import ConvArch, TrainTrace, arch_from_dict, conv_net_forward, init_convnet
from .nn.optim import ParamStore, adam_step, cosine_lr
from .nn.tensor import NonFiniteError
from .optical_flow import LUMA, warp_backward

log = logging.getLogger(__name__)


def _ordered(name: str, rng: tuple[float, float]) -> tuple[float, float]:
    lo, hi = float(rng[0]), float(rng[1])
    if lo > hi:
        raise ValueError(f"{name}: lower bound {lo} exceeds upper bound {hi}")
    return lo, hi


@dataclass
class DistortionConfig:
    # appearance
    gain_range: tuple[float, float] = (0.7, 1.3)
    offset_range: tuple[float, float] = (-0.15, 0.15)
    saturation_range: tuple[float, float] = (0.7, 1.3)
    per_channel: bool = True
    channel_jitter: float = 0.08  # relative spread of per-channel gains
    local_gain: float = 0.1  # amplitude of a smooth spatial gain field
    # structure
    grid_size: int = 4
    max_displacement: float = 2.5  # pixels
    blob_count: int = 2
    blob_sigma: float = 5.0
    blob_blur: float = 2.5

    def __post_init__(self):
        self.gain_range = _ordered("gain_range", self.gain_range)
        self.offset_range = _ordered("offset_range", self.offset_range)
        self.saturation_range = _ordered("saturation_range", self.saturation_range)
        if self.gain_range[0] <= 0 or self.saturation_range[0] < 0:
            raise ValueError("gains must be positive and saturation non-negative")
        if self.grid_size < 2 or self.max_displacement < 0 or self.blob_count < 0:
            raise ValueError("invalid structure distortion parameters")
        if self.channel_jitter < 0 or self.local_gain < 0:
            raise ValueError("jitter amplitudes must be non-negative")

    def validate_for(self, height: int, width: int) -> None:
        if self.max_displacement >= min(height, width) / 4:
            raise ValueError(f"max displacement {self.max_displacement} too large for {height}x{width}")

    @classmethod
    def identity(cls) -> "DistortionConfig":
        return cls(gain_range=(1, 1), offset_range=(0, 0), saturation_range=(1, 1), channel_jitter=0.0,
                   local_gain=0.0, max_displacement=0.0, blob_count=0)

    @classmethod
    def from_dict(cls, d: dict) -> "DistortionConfig":
        d = dict(d)
        for k in ("gain_range", "offset_range", "saturation_range"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("gain_range", "offset_range", "saturation_range"):
            d[k] = list(d[k])
        return d


def _rng(seed) -> np.random.Generator:
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return np.random.Generator(np.random.Philox(ss))


def _smooth_field(rng: np.random.Generator, grid: int, height: int, width: int, amplitude: float) -> np.ndarray:
    """Coarse uniform(-amplitude, amplitude) grid, bilinearly upsampled to (H, W)."""
    coarse = rng.uniform(-amplitude, amplitude, size=(grid, grid))
    ys = np.linspace(0, grid - 1, height)
    xs = np.linspace(0, grid - 1, width)
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    return ndimage.map_coordinates(coarse, [yy, xx], order=1, mode="nearest")


def distort_appearance(image: np.ndarray, cfg: DistortionConfig, seed) -> np.ndarray:
    """τ_a: per-channel gain/offset, saturation about luma, smooth spatial gain; clamped."""
    x = np.asarray(image, dtype=np.float64)
    rng = _rng(seed)
    g = rng.uniform(*cfg.gain_range)
    b = rng.uniform(*cfg.offset_range)
    s = rng.uniform(*cfg.saturation_range)
    gains = np.full(3, g)
    if cfg.per_channel and cfg.channel_jitter > 0:
        gains = g * (1.0 + rng.uniform(-cfg.channel_jitter, cfg.channel_jitter, size=3))
    out = x * gains + b
    if s != 1.0:
        luma = (out @ LUMA)[..., None]
        out = luma + s * (out - luma)
    if cfg.local_gain > 0:
        out = out * (1.0 + _smooth_field(rng, 3, *x.shape[:2], cfg.local_gain))[..., None]
    return np.clip(out, 0.0, 1.0).astype(np.asarray(image).dtype)


def displacement_field(cfg: DistortionConfig, height: int, width: int, seed) -> np.ndarray:
    """Smooth random (H, W, 2) displacement used by :func:`distort_structure`."""
    rng = _rng(seed)
    if cfg.max_displacement == 0:
        return np.zeros((height, width, 2))
    return np.stack([_smooth_field(rng, cfg.grid_size, height, width, cfg.max_displacement) for _ in range(2)], -1)


def apply_displacement(image: np.ndarray, disp: np.ndarray) -> np.ndarray:
    """Backward-warp ``image`` by ``disp`` with border clamping."""
    return warp_backward(np.asarray(image, dtype=np.float64), disp, padding="border")


def distort_structure(image: np.ndarray, cfg: DistortionConfig, seed) -> np.ndarray:
    """τ_s: elastic warp plus soft blobs of blurred content; no colour change."""
    x = np.asarray(image)
    if cfg.max_displacement == 0 and cfg.blob_count == 0:
        return x.copy()
    h, w = x.shape[:2]
    cfg.validate_for(h, w)
    rng = _rng(seed)
    disp_seed = rng.integers(0, 2**63)
    out = apply_displacement(x, displacement_field(cfg, h, w, [int(disp_seed)]))
    if cfg.blob_count:
        blurred = ndimage.gaussian_filter(out, (cfg.blob_blur, cfg.blob_blur, 0), mode="nearest")
        ys, xs = np.mgrid[0:h, 0:w]
        alpha = np.zeros((h, w))
        for _ in range(cfg.blob_count):
            cy, cx = rng.uniform(0, h - 1), rng.uniform(0, w - 1)
            alpha = np.maximum(alpha, np.exp(-((xs - cx) ** 2 + (ys - cy) ** 2) / (2 * cfg.blob_sigma ** 2)))
        out = out + alpha[..., None] * (blurred - out)
    return np.clip(out, 0.0, 1.0).astype(x.dtype)


@dataclass
class FilterConfig:
    epochs: int = 100
    batch_size: int = 8
    patch: int = 64
    lr: float = 1e-3
    decay_start: float = 0.5
    final_lr_ratio: float = 0.1
    hidden: int = 32
    layers: int = 6
    seed: int = 0
    log_every: int = 10
    probe_pairs: int = 32
    anchor_sigma: float = 2.0  # 0 -> the head is anchored on the input frame alone
    distortion: DistortionConfig = field(default_factory=DistortionConfig)

    def __post_init__(self):
        if isinstance(self.distortion, dict):
            self.distortion = DistortionConfig.from_dict(self.distortion)
        if self.epochs < 1 or self.batch_size < 1 or self.patch < 8:
            raise ValueError("invalid filter training configuration")
        if self.anchor_sigma < 0:
            raise ValueError("anchor_sigma must be non-negative")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["distortion"] = self.distortion.to_dict()
        return d


class FilterError(ValueError):
    pass


@dataclass
class FilterModel:
    params: ParamStore
    arch: ConvArch
    config: dict = field(default_factory=dict)
    trace: TrainTrace = field(default_factory=TrainTrace)

    @classmethod
    def initialize(cls, cfg: FilterConfig) -> "FilterModel":
        arch = ConvArch(in_channels=6, hidden_channels=cfg.hidden, num_layers=cfg.layers, skip_offset=0)
        return cls(init_convnet(arch, np.random.default_rng([cfg.seed, 7])), arch, cfg.to_dict())

    @property
    def anchor_sigma(self) -> float:
        return float(self.config.get("anchor_sigma", 0.0))

    def forward(self, inputs: np.ndarray, structure: np.ndarray):
        inputs = np.asarray(inputs, np.float32)
        structure = np.asarray(structure, np.float32)
        x = np.concatenate([inputs, structure], axis=-1)
        anchor = guided_anchor(inputs, structure, self.anchor_sigma) if self.anchor_sigma > 0 else None
        return conv_net_forward(self.params, x, self.arch, anchor=anchor)

    def save(self, path: str | Path) -> Path:
        meta = {"kind": "filter", "arch": self.arch.to_dict(), "config": self.config,
                "header": self.trace.header}
        return save_checkpoint(path, self.params, meta)

    @classmethod
    def load(cls, path: str | Path) -> "FilterModel":
        params, meta = load_checkpoint(path)
        if meta.get("kind") != "filter":
            raise FilterError(f"{path}: not a filter checkpoint")
        return cls(params, arch_from_dict(meta["arch"]), meta.get("config", {}),
                   TrainTrace(header=meta.get("header", {})))


def guided_anchor(inputs: np.ndarray, structure: np.ndarray, sigma: float) -> np.ndarray:
    """Fixed starting point for F: the input's detail on top of the other frame's colours.

    ``clip(I - G(I) + G(A))`` with ``G`` a Gaussian blur of width ``sigma``
    over the two spatial axes of an (H, W, C) image or (N, H, W, C) batch.
    The network learns a residual around it in logit space.
    """
    inputs = np.asarray(inputs, np.float32)
    structure = np.asarray(structure, np.float32)
    spatial = (sigma, sigma, 0) if inputs.ndim == 3 else (0, sigma, sigma, 0)
    blur = lambda v: ndimage.gaussian_filter(v, spatial, mode="nearest")  # noqa: E731
    return np.clip(inputs - blur(inputs) + blur(structure), 0.0, 1.0)


def make_pair(image: np.ndarray, cfg: DistortionConfig, seed) -> tuple[np.ndarray, np.ndarray]:
    """(τ_a(X), τ_s(X)) with independent sub-seeds derived from ``seed``."""
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    a_seed, s_seed = ss.spawn(2)
    return distort_appearance(image, cfg, a_seed), distort_structure(image, cfg, s_seed)


def _crop(rng: np.random.Generator, image: np.ndarray, patch: int) -> np.ndarray:
    h, w = image.shape[:2]
    if h < patch or w < patch:
        raise FilterError(f"corpus image {h}x{w} smaller than patch {patch}")
    y = int(rng.integers(0, h - patch + 1))
    x = int(rng.integers(0, w - patch + 1))
    return image[y:y + patch, x:x + patch]


_PROBE_EPOCH = 2**31  # seed slot reserved for the fixed probe set


def _batch(corpus, order, epoch: int, start: int, count: int, cfg: FilterConfig):
    xs, ia, isx = [], [], []
    for j in range(start, min(start + count, len(order))):
        rng = _rng([cfg.seed, epoch, j])
        clean = _crop(rng, corpus[order[j]], cfg.patch).astype(np.float32)
        a, s = make_pair(clean, cfg.distortion, [cfg.seed, epoch, j, 1])
        xs.append(clean)
        ia.append(a)
        isx.append(s)
    return np.stack(xs), np.stack(ia), np.stack(isx)


def train_filter(corpus: list[np.ndarray], cfg: FilterConfig | None = None,
                 model: FilterModel | None = None) -> FilterModel:
    """Minimise ‖F(τ_a(X), τ_s(X)) − X‖² over random crops of ``corpus``.

    Fresh distortions are drawn per sample per epoch.  The trace header
    records the identity-baseline loss ‖τ_a(X) − X‖² on a fixed probe set,
    measured before the first update; ``probe_loss_end`` is the trained
    model's loss on the same probe set.
    """
    cfg = cfg or FilterConfig()
    if not corpus:
        raise FilterError("empty training corpus")
    corpus = [np.asarray(c, dtype=np.float32) for c in corpus]
    model = model or FilterModel.initialize(cfg)
    model.config = cfg.to_dict()

    probe_order = np.random.default_rng([cfg.seed, 99]).integers(0, len(corpus), size=cfg.probe_pairs)
    px, pa, ps = _batch(corpus, probe_order, _PROBE_EPOCH, 0, cfg.probe_pairs, cfg)
    trace = TrainTrace(header={
        "identity_baseline_loss": float(np.mean((pa.astype(np.float64) - px) ** 2)),
        "probe_loss_start": _probe_loss(model, px, pa, ps),
        "batch_size": cfg.batch_size,
        "patch": cfg.patch,
    })
    order_rng = np.random.default_rng([cfg.seed, 3])
    total_steps = cfg.epochs * -(-len(corpus) // cfg.batch_size)
    for epoch in range(cfg.epochs):
        order = order_rng.permutation(len(corpus))
        for start in range(0, len(order), cfg.batch_size):
            clean, app, struct = _batch(corpus, order, epoch, start, cfg.batch_size, cfg)
            out = model.forward(app, struct)
            loss = T.mse(out, clean)
            if not np.isfinite(loss.data):
                raise NonFiniteError(f"filter loss became non-finite in epoch {epoch}")
            model.params.zero_grad()
            loss.backward()
            adam_step(model.params, cosine_lr(cfg.lr, len(trace.losses), total_steps, cfg.decay_start,
                                              cfg.final_lr_ratio))
            trace.losses.append(float(loss.data))
        steps = -(-len(order) // cfg.batch_size)
        log.info("filter epoch %d loss %.6f", epoch, np.mean(trace.losses[-steps:]))
    trace.header["probe_loss_end"] = _probe_loss(model, px, pa, ps)
    model.trace = trace
    return model


def _probe_loss(model: FilterModel, clean, app, struct) -> float:
    out = model.forward(app, struct).data.astype(np.float64)
    return float(np.mean((out - clean) ** 2))


def filter_frame(model: FilterModel, frame: np.ndarray, atlas_frame: np.ndarray) -> np.ndarray:
    """O_t^f = F(I_t, A_t) for one (H, W, 3) frame pair."""
    frame = np.asarray(frame)
    atlas_frame = np.asarray(atlas_frame)
    if frame.shape != atlas_frame.shape or frame.ndim != 3:
        raise FilterError(f"frame {frame.shape} and atlas frame {atlas_frame.shape} differ")
    if min(frame.shape[:2]) < 2:
        raise FilterError("frame too small for the filter")
    return model.forward(frame[None], atlas_frame[None]).data[0]


def filter_video(model: FilterModel, video: np.ndarray, atlas_video: np.ndarray) -> np.ndarray:
    if video.shape != atlas_video.shape:
        raise FilterError(f"video {video.shape} and atlas video {atlas_video.shape} differ")
    return np.stack([filter_frame(model, video[t], atlas_video[t]) for t in range(len(video))])
