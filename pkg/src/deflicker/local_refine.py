"""Recurrent local refinement: a small conv net L that removes residual local
flicker from the filtered frames.

Inference is a strict recurrence ``O_1 = O_1^f`` and
``O_t = L(O_t^f ⊕ O_{t-1}^f ⊕ O_{t-1})``.  Training unrolls the recurrence
over a few frames and penalises the occlusion-masked L1 difference between
``O_t`` and the flow-warped ``O_{t-1}``, anchored by a squared-error
reconstruction term towards ``O_t^f``.

By default the three frames enter L as the temporal differences
``O_t^f − O_{t-1}^f`` and ``O_t^f − O_{t-1}`` through a bias-free ReLU stack
whose logit-space correction is added to ``O_t^f``.  That correction is a
positively homogeneous function of the differences, so a video that does not
change is passed through exactly, and small changes receive proportionally
small corrections.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .nn import tensor as T
from .nn.checkpoint import load_checkpoint, save_checkpoint
from .nn.layers import ConvArch, TrainTrace, arch_from_dict, conv_net_forward, init_convnet
from .nn.optim import ParamStore, adam_step, cosine_lr
from .nn.tensor import NonFiniteError
from .optical_flow import FlowConfig, FlowProvider, warp_backward

log = logging.getLogger(__name__)


@dataclass
class RefinerConfig:
    lambda_temporal: float = 0.5
    unroll: int = 4
    epochs: int = 50
    batch_size: int = 8
    lr: float = 1e-4
    decay_start: float = 0.5
    final_lr_ratio: float = 0.1
    hidden: int = 24
    layers: int = 4
    difference_inputs: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.unroll < 1 or self.epochs < 1 or self.batch_size < 1:
            raise ValueError("invalid refiner training configuration")
        if self.lambda_temporal < 0:
            raise ValueError("lambda_temporal must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)


class RefinerError(ValueError):
    pass


@dataclass
class RefinerModel:
    params: ParamStore
    arch: ConvArch
    config: dict = field(default_factory=dict)
    trace: TrainTrace = field(default_factory=TrainTrace)

    @classmethod
    def initialize(cls, cfg: RefinerConfig) -> "RefinerModel":
        if cfg.difference_inputs:
            arch = ConvArch(in_channels=6, hidden_channels=cfg.hidden, num_layers=cfg.layers, bias=False)
        else:
            arch = ConvArch(in_channels=9, hidden_channels=cfg.hidden, num_layers=cfg.layers, skip_offset=0)
        return cls(init_convnet(arch, np.random.default_rng([cfg.seed, 13])), arch, cfg.to_dict())

    @property
    def difference_inputs(self) -> bool:
        return bool(self.config.get("difference_inputs", False))

    def step(self, cur_f, prev_f, prev_out):
        """One recurrence step on NHWC tensors/arrays."""
        cur_f, prev_f, prev_out = T.as_tensor(cur_f), T.as_tensor(prev_f), T.as_tensor(prev_out)
        if self.difference_inputs:
            x = T.concat([T.sub(cur_f, prev_f), T.sub(cur_f, prev_out)], axis=-1)
            return conv_net_forward(self.params, x, self.arch, anchor=cur_f.data)
        x = T.concat([cur_f, prev_f, prev_out], axis=-1)
        return conv_net_forward(self.params, x, self.arch)

    def save(self, path: str | Path) -> Path:
        meta = {"kind": "refiner", "arch": self.arch.to_dict(), "config": self.config, "header": self.trace.header}
        return save_checkpoint(path, self.params, meta)

    @classmethod
    def load(cls, path: str | Path) -> "RefinerModel":
        params, meta = load_checkpoint(path)
        if meta.get("kind") != "refiner":
            raise RefinerError(f"{path}: not a refiner checkpoint")
        return cls(params, arch_from_dict(meta["arch"]), meta.get("config", {}), TrainTrace(header=meta.get("header", {})))


def refine_video(model: RefinerModel, filtered: np.ndarray) -> np.ndarray:
    """Run the recurrence over a (T, H, W, 3) filtered video; frame 0 passes through."""
    filtered = np.asarray(filtered)
    if not np.issubdtype(filtered.dtype, np.floating):
        filtered = filtered.astype(np.float32)
    if filtered.ndim != 4 or filtered.shape[-1] != 3 or len(filtered) == 0:
        raise RefinerError(f"expected a non-empty (T, H, W, 3) video, got {filtered.shape}")
    out = np.empty_like(filtered)
    out[0] = filtered[0]
    for t in range(1, len(filtered)):
        out[t] = model.step(filtered[t][None], filtered[t - 1][None], out[t - 1][None]).data[0]
    return out


@dataclass
class TrainingClip:
    """A locally flickered clip plus flows/masks t->t-1 estimated on its clean source."""

    flickered: np.ndarray  # (T, H, W, 3)
    flows: np.ndarray  # (T, H, W, 2); index 0 unused
    masks: np.ndarray  # (T, H, W); index 0 unused

    @classmethod
    def from_pair(cls, clean: np.ndarray, flickered: np.ndarray, flow_cfg: FlowConfig | None = None) -> "TrainingClip":
        clean = np.asarray(clean, dtype=np.float32)
        flickered = np.asarray(flickered, dtype=np.float32)
        if clean.shape != flickered.shape:
            raise RefinerError("clean and flickered clips differ in shape")
        if len(clean) < 2:
            raise RefinerError("training clips need at least 2 frames")
        prov = FlowProvider(clean, flow_cfg)
        flows = np.zeros(clean.shape[:3] + (2,), np.float32)
        masks = np.zeros(clean.shape[:3], np.uint8)
        for t in range(1, len(clean)):
            flows[t], masks[t] = prov.pair(t, t - 1)
        return cls(flickered, flows, masks)


def local_loss(cur, prev, flow: np.ndarray, mask: np.ndarray):
    """‖M ⊙ (O_t − warp(O_{t−1}))‖₁ as a mean over valid pixels and channels."""
    return T.masked_l1(cur, T.bilinear_warp(T.as_tensor(prev), flow), mask)


def identity_local_loss(clips: list[TrainingClip]) -> float:
    """L_local of the identity mapping O_t = O_t^f, averaged over all pairs."""
    vals = []
    for c in clips:
        for t in range(1, len(c.flickered)):
            m = c.masks[t].astype(bool)
            if m.any():
                warped = warp_backward(c.flickered[t - 1].astype(np.float64), c.flows[t])
                vals.append(np.abs(c.flickered[t] - warped)[m].mean())
    return float(np.mean(vals)) if vals else 0.0


def model_local_loss(model: RefinerModel, clips: list[TrainingClip]) -> float:
    """L_local of the trained recurrence run over each whole clip."""
    vals = []
    for c in clips:
        out = refine_video(model, c.flickered)
        for t in range(1, len(out)):
            m = c.masks[t].astype(bool)
            if m.any():
                warped = warp_backward(out[t - 1].astype(np.float64), c.flows[t])
                vals.append(np.abs(out[t] - warped)[m].mean())
    return float(np.mean(vals)) if vals else 0.0


def train_refiner(clips: list[TrainingClip], cfg: RefinerConfig | None = None,
                  model: RefinerModel | None = None) -> RefinerModel:
    """Minimise λ_t·L_local + L_recon through ``cfg.unroll`` recurrence steps.

    Each sample is a random window of ``unroll + 1`` frames; the window's
    first output is anchored to its filtered frame (as frame 1 is at
    inference) and gradients flow back through the whole window.
    """
    cfg = cfg or RefinerConfig()
    if not clips:
        raise RefinerError("no training clips")
    shapes = {c.flickered.shape[1:] for c in clips}
    if len(shapes) != 1:
        raise RefinerError(f"training clips must share frame dims, got {sorted(shapes)}")
    window = min(cfg.unroll + 1, min(len(c.flickered) for c in clips))
    if window < 2:
        raise RefinerError("training clips need at least 2 frames")
    model = model or RefinerModel.initialize(cfg)
    model.config = cfg.to_dict()
    trace = TrainTrace(header={"identity_local_loss": identity_local_loss(clips),
                               "lambda_temporal": cfg.lambda_temporal, "unroll": window - 1})
    steps_per_epoch = -(-len(clips) // cfg.batch_size)
    total = cfg.epochs * steps_per_epoch
    rng = np.random.default_rng([cfg.seed, 5])
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(clips))
        for b in range(steps_per_epoch):
            members = order[b * cfg.batch_size:(b + 1) * cfg.batch_size]
            starts = [int(rng.integers(0, len(clips[i].flickered) - window + 1)) for i in members]
            seq = np.stack([clips[i].flickered[s:s + window] for i, s in zip(members, starts)], axis=1)
            flows = np.stack([clips[i].flows[s:s + window] for i, s in zip(members, starts)], axis=1)
            masks = np.stack([clips[i].masks[s:s + window] for i, s in zip(members, starts)], axis=1)

            prev_out = T.Tensor(seq[0])
            total_loss = None
            for k in range(1, window):
                cur = model.step(seq[k], seq[k - 1], prev_out)
                recon = T.mse(cur, seq[k])
                term = recon
                if cfg.lambda_temporal > 0:
                    term = T.add(term, T.mul(local_loss(cur, prev_out, flows[k], masks[k]),
                                             np.float32(cfg.lambda_temporal)))
                total_loss = term if total_loss is None else T.add(total_loss, term)
                prev_out = cur
            loss = T.mul(total_loss, np.float32(1.0 / (window - 1)))
            if not np.isfinite(loss.data):
                raise NonFiniteError(f"refiner loss became non-finite in epoch {epoch}")
            model.params.zero_grad()
            loss.backward()
            adam_step(model.params, cosine_lr(cfg.lr, len(trace.losses), total, cfg.decay_start, cfg.final_lr_ratio))
            trace.losses.append(float(loss.data))
        log.info("refiner epoch %d loss %.6f", epoch, np.mean(trace.losses[-steps_per_epoch:]))
    model.trace = trace
    return model
