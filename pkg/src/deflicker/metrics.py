"""Warping error (short + long term) and PSNR."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .optical_flow import FlowProvider, warp_backward

PSNR_CAP = 99.0


class MetricError(ValueError):
    pass


@dataclass
class MetricReport:
    per_frame: list[float | None]  # E_warp^t for t = 2..T (index 0 is frame 2); None if undefined
    mean_warp_error: float | None
    frame_count: int
    skipped: int = 0
    psnr_vs_reference: float | None = None
    flow_source: str = "self"
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_text(self) -> str:
        lines = [
            f"frame_count: {self.frame_count}",
            f"flow_source: {self.flow_source}",
            f"mean_warp_error: {_fmt(self.mean_warp_error)}",
            f"skipped_frames: {self.skipped}",
            f"psnr_vs_reference: {_fmt(self.psnr_vs_reference)}",
        ]
        for k in sorted(self.extra):
            lines.append(f"{k}: {self.extra[k]}")
        lines.append("per_frame: " + " ".join(_fmt(v) for v in self.per_frame))
        return "\n".join(lines) + "\n"


def _fmt(v) -> str:
    return "undefined" if v is None else f"{v:.6f}"


def warp_error_pair(target: np.ndarray, source: np.ndarray, flow: np.ndarray, mask: np.ndarray) -> float | None:
    """Mean |target - warp(source)| over masked pixels and channels; None if the mask is empty."""
    target = np.asarray(target, dtype=np.float64)
    source = np.asarray(source, dtype=np.float64)
    if target.shape != source.shape or target.shape[:2] != mask.shape:
        raise MetricError(f"shape mismatch: {target.shape}, {source.shape}, mask {mask.shape}")
    m = mask.astype(bool)
    count = int(m.sum())
    if count == 0:
        return None
    warped = warp_backward(source, flow)
    resid = np.abs(target - warped)[m]
    return float(resid.sum() / (target.shape[2] * count))


def warp_error_video(video: np.ndarray, flows: FlowProvider) -> MetricReport:
    """E_warp^t = E_pair(O_t, O_{t-1}) + E_pair(O_t, O_1) for t = 2..T, averaged over t.

    ``flows`` supplies (flow t->s, mask); it may be built on ``video``
    itself or on a reference clip of the same size.
    """
    video = np.asarray(video)
    n = len(video)
    if n < 2:
        raise MetricError("warping error needs at least 2 frames")
    if flows.frame_count != n or tuple(flows.frame_shape) != video.shape[1:3]:
        raise MetricError("flow provider does not match the video's size")
    per_frame: list[float | None] = []
    for t in range(1, n):
        terms = []
        for s in (t - 1, 0):
            fl, mask = flows.pair(t, s)
            terms.append(warp_error_pair(video[t], video[s], fl, mask))
        per_frame.append(None if any(v is None for v in terms) else terms[0] + terms[1])
    defined = [v for v in per_frame if v is not None]
    mean = float(np.sum(defined) / len(defined)) if defined else None
    return MetricReport(per_frame, mean, n, skipped=n - 1 - len(defined))


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise MetricError(f"shape mismatch: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse < 1e-12:
        return PSNR_CAP
    return float(10.0 * np.log10(1.0 / mse))
