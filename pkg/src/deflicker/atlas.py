"""Single-layer neural atlas: a mapping MLP sends (x, y, t) to a shared UV
plane and an atlas MLP stores colour over that plane.

Reconstructing every pixel through the shared atlas yields a video that is
temporally consistent by construction, although its structure may be
flawed wherever the mapping cannot follow the motion.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .nn import tensor as T
from .nn.checkpoint import load_checkpoint, save_checkpoint
from .nn.layers import MLPArch, TrainTrace, arch_from_dict, init_mlp, mlp_forward
from .nn.optim import ParamStore, adam_step, cosine_lr
from .nn.tensor import NonFiniteError, Tensor
from .optical_flow import FlowProvider

log = logging.getLogger(__name__)


@dataclass
class AtlasConfig:
    iterations: int = 4000
    batch_size: int = 4096
    lr: float = 8e-3
    lambda_consist: float = 3.0
    octaves: int = 6
    hidden: int = 64
    layers: int = 4
    warmup_fraction: float = 0.1
    identity_weight: float = 1.0
    decay_start: float = 0.5  # fraction of iterations after which lr decays
    final_lr_ratio: float = 0.05
    seed: int = 0
    log_every: int = 100

    def __post_init__(self):
        if self.iterations < 1 or self.batch_size < 1:
            raise ValueError("iterations and batch_size must be positive")
        if self.octaves < 1:
            raise ValueError("octaves must be >= 1")
        if self.lambda_consist < 0 or not 0 <= self.warmup_fraction <= 1:
            raise ValueError("invalid consistency weight or warm-up fraction")

    def to_dict(self) -> dict:
        return asdict(self)


class AtlasError(RuntimeError):
    pass


def normalize_coords(x, y, t, height: int, width: int, frames: int) -> np.ndarray:
    """Pixel indices -> (x̂, ŷ, t̂) in [-1, 1]; x and y address pixel centres."""
    xn = (2.0 * np.asarray(x, dtype=np.float64) + 1.0) / width - 1.0
    yn = (2.0 * np.asarray(y, dtype=np.float64) + 1.0) / height - 1.0
    t = np.asarray(t, dtype=np.float64)
    tn = 2.0 * t / (frames - 1) - 1.0 if frames > 1 else np.zeros_like(t)
    return np.stack(np.broadcast_arrays(xn, yn, tn), axis=-1).astype(np.float32)


@dataclass
class AtlasModel:
    params: ParamStore  # mapping weights under "m.", atlas weights under "a."
    height: int
    width: int
    frames: int
    octaves: int
    mapping_arch: MLPArch
    atlas_arch: MLPArch
    config: dict = field(default_factory=dict)
    trace: TrainTrace = field(default_factory=TrainTrace)

    @classmethod
    def initialize(cls, height: int, width: int, frames: int, cfg: AtlasConfig) -> "AtlasModel":
        m_arch = MLPArch((3,) + (cfg.hidden,) * cfg.layers + (2,), output_activation="tanh")
        a_arch = MLPArch((4 * cfg.octaves,) + (cfg.hidden,) * cfg.layers + (3,), output_activation="sigmoid")
        rng = np.random.default_rng(cfg.seed)
        params = ParamStore()
        for prefix, arch in (("m.", m_arch), ("a.", a_arch)):
            for k, t in init_mlp(arch, rng, prefix=prefix).items():
                params.add(k, t.data)
        return cls(params, height, width, frames, cfg.octaves, m_arch, a_arch, cfg.to_dict())

    # -- forward pieces -------------------------------------------------
    def map_uv(self, coords) -> Tensor:
        return mlp_forward(self.params, coords, self.mapping_arch, prefix="m.")

    def color(self, uv) -> Tensor:
        return mlp_forward(self.params, T.positional_encoding(T.as_tensor(uv), self.octaves), self.atlas_arch, prefix="a.")

    def predict_uv(self, coords: np.ndarray, chunk: int = 65536) -> np.ndarray:
        coords = np.asarray(coords, dtype=np.float32).reshape(-1, 3)
        return np.concatenate([self.map_uv(coords[i:i + chunk]).data for i in range(0, len(coords), chunk)])

    def sample_atlas(self, uv: np.ndarray, chunk: int = 65536) -> np.ndarray:
        uv = np.asarray(uv, dtype=np.float32).reshape(-1, 2)
        return np.concatenate([self.color(uv[i:i + chunk]).data for i in range(0, len(uv), chunk)])

    def frame_coords(self, t: int) -> np.ndarray:
        ys, xs = np.mgrid[0:self.height, 0:self.width]
        return normalize_coords(xs, ys, np.full_like(xs, t), self.height, self.width, self.frames).reshape(-1, 3)

    # -- persistence ------------------------------------------------------
    def save(self, path: str | Path) -> Path:
        meta = {
            "kind": "atlas",
            "height": self.height,
            "width": self.width,
            "frames": self.frames,
            "octaves": self.octaves,
            "mapping_arch": self.mapping_arch.to_dict(),
            "atlas_arch": self.atlas_arch.to_dict(),
            "config": self.config,
        }
        return save_checkpoint(path, self.params, meta)

    @classmethod
    def load(cls, path: str | Path) -> "AtlasModel":
        params, meta = load_checkpoint(path)
        if meta.get("kind") != "atlas":
            raise AtlasError(f"{path}: not an atlas checkpoint")
        return cls(params, meta["height"], meta["width"], meta["frames"], meta["octaves"],
                   arch_from_dict(meta["mapping_arch"]), arch_from_dict(meta["atlas_arch"]), meta.get("config", {}))


def _adjacent_correspondences(flows: FlowProvider, frames: int, height: int, width: int):
    """Stacked flow t->t-1 and validity mask for every t (frame 0 is all-invalid)."""
    fl = np.zeros((frames, height, width, 2), np.float32)
    mask = np.zeros((frames, height, width), bool)
    for t in range(1, frames):
        f, m = flows.pair(t, t - 1)
        fl[t] = f
        mask[t] = m > 0
    return fl, mask


def train_atlas(video: np.ndarray, flows: FlowProvider | None, cfg: AtlasConfig | None = None) -> AtlasModel:
    """Fit mapping + atlas networks to ``video`` (T, H, W, 3).

    Per step the loss is a colour reconstruction term over uniformly
    sampled pixels plus ``lambda_consist`` times the squared UV distance
    between each sampled pixel (frame t >= 1) and its flow correspondence in
    frame t-1, restricted to the occlusion mask.  UV differences are scaled
    to pixel units so the weight is resolution independent.  During the
    warm-up fraction an identity term pulls M(x, y, t) towards (x̂, ŷ) with
    a weight that decays linearly to zero.
    """
    cfg = cfg or AtlasConfig()
    video = np.asarray(video, dtype=np.float32)
    if video.ndim != 4 or len(video) == 0:
        raise AtlasError("train_atlas needs a non-empty (T, H, W, 3) video")
    frames, height, width = video.shape[:3]
    model = AtlasModel.initialize(height, width, frames, cfg)
    use_consist = cfg.lambda_consist > 0 and frames > 1 and flows is not None
    if use_consist:
        corr_flow, corr_mask = _adjacent_correspondences(flows, frames, height, width)
    uv_scale = max(height, width) / 2.0
    flat_video = video.reshape(-1, 3)

    rng = np.random.default_rng([cfg.seed, 1])
    warmup_steps = int(round(cfg.warmup_fraction * cfg.iterations))
    trace = TrainTrace(header={"iterations": cfg.iterations, "batch_size": cfg.batch_size})
    n_pix = frames * height * width
    for it in range(cfg.iterations):
        idx = rng.integers(0, n_pix, size=cfg.batch_size)
        t, rem = np.divmod(idx, height * width)
        y, x = np.divmod(rem, width)
        coords = normalize_coords(x, y, t, height, width, frames)
        uv = model.map_uv(coords)
        recon = T.mse(model.color(uv), flat_video[idx])
        loss = recon

        if use_consist:
            valid = corr_mask[t, y, x]
            if valid.any():
                tv, yv, xv = t[valid], y[valid], x[valid]
                here = coords[valid]
                there = normalize_coords(xv + corr_flow[tv, yv, xv, 0], yv + corr_flow[tv, yv, xv, 1], tv - 1,
                                         height, width, frames)
                d = T.sub(model.map_uv(here), model.map_uv(there))
                consist = T.mean(T.square(T.mul(d, np.float32(uv_scale))))
                loss = T.add(loss, T.mul(consist, np.float32(cfg.lambda_consist)))

        if it < warmup_steps:
            w = cfg.identity_weight * (1.0 - it / warmup_steps)
            ident = T.mean(T.square(T.sub(uv, coords[:, :2])))
            loss = T.add(loss, T.mul(ident, np.float32(w)))

        if not np.isfinite(loss.data):
            raise NonFiniteError(f"atlas loss became non-finite at iteration {it}")
        model.params.zero_grad()
        loss.backward()
        adam_step(model.params, cosine_lr(cfg.lr, it, cfg.iterations, cfg.decay_start, cfg.final_lr_ratio))
        trace.losses.append(float(recon.data))
        if cfg.log_every and it % cfg.log_every == 0:
            log.debug("atlas it=%d recon=%.6f total=%.6f", it, float(recon.data), float(loss.data))
    model.trace = trace
    return model


def reconstruct_atlas_video(model: AtlasModel, dims: tuple[int, int, int] | None = None) -> np.ndarray:
    """A_t(x, y) = A(φ(M(x, y, t))) for every pixel of every frame."""
    if dims is not None and tuple(dims) != (model.frames, model.height, model.width):
        raise AtlasError(f"dims {tuple(dims)} do not match the model "
                         f"({model.frames}, {model.height}, {model.width})")
    out = np.empty((model.frames, model.height, model.width, 3), np.float32)
    for t in range(model.frames):
        uv = model.predict_uv(model.frame_coords(t))
        out[t] = model.sample_atlas(uv).reshape(model.height, model.width, 3)
    return out


def render_atlas_image(model: AtlasModel, resolution: int | tuple[int, int]) -> np.ndarray:
    """Sample the atlas on a regular grid spanning [-1, 1]^2 (corners included)."""
    if isinstance(resolution, int):
        resolution = (resolution, resolution)
    h, w = resolution
    if h < 2 or w < 2:
        raise ValueError("atlas preview needs at least 2x2 samples")
    vs, us = np.meshgrid(np.linspace(-1, 1, h), np.linspace(-1, 1, w), indexing="ij")
    uv = np.stack([us, vs], axis=-1).reshape(-1, 2)
    return model.sample_atlas(uv).reshape(h, w, 3)


def uv_drift(model: AtlasModel, reference_frame: int = 0) -> np.ndarray:
    """Per-pixel mean over frames of ‖M(x, y, t) - M(x, y, t_ref)‖ for a static scene."""
    ref = model.predict_uv(model.frame_coords(reference_frame))
    total = np.zeros(len(ref))
    others = [t for t in range(model.frames) if t != reference_frame]
    for t in others:
        total += np.linalg.norm(model.predict_uv(model.frame_coords(t)) - ref, axis=-1)
    return (total / max(len(others), 1)).reshape(model.height, model.width)
