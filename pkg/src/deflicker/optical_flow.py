"""Pyramidal Lucas-Kanade flow, backward warping and forward-backward occlusion masks.

Flow fields are float32 arrays of shape (H, W, 2) holding (u, v) in pixels:
pixel (x, y) of the source corresponds to (x + u, y + v) in the target.
Masks are uint8 arrays of shape (H, W) with values in {0, 1}.
"""

from __future__ import annotations

import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .sampling import bilinear_taps

LUMA = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True)
class FlowConfig:
    levels: int | None = None  # None -> floor(log2(min_dim / 8)) + 1
    iterations: int = 8
    window: int = 5
    regularization: float = 1e-3
    occlusion_tol: float = 1.0

    def to_dict(self) -> dict:
        return asdict(self)


class FlowError(ValueError):
    pass


def grayscale(frame: np.ndarray) -> np.ndarray:
    return np.asarray(frame, dtype=np.float64) @ LUMA


def standardize(gray: np.ndarray) -> np.ndarray:
    g = gray - gray.mean()
    sd = g.std()
    return g / sd if sd > 1e-12 else g


def pyramid_levels(height: int, width: int) -> int:
    m = min(height, width)
    if m < 8:
        raise FlowError(f"frame too small for flow: min dim {m} < 8")
    return int(np.floor(np.log2(m / 8.0))) + 1


def _downsample(img: np.ndarray) -> np.ndarray:
    return ndimage.gaussian_filter(img, 1.0, mode="nearest")[::2, ::2]


def _sample_clamped(img: np.ndarray, flow: np.ndarray) -> np.ndarray:
    h, w = img.shape
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    coords = np.stack([ys + flow[..., 1], xs + flow[..., 0]])
    return ndimage.map_coordinates(img, coords, order=1, mode="nearest")


def _upsample_flow(flow: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    h, w = shape
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    coords = np.stack([ys / 2.0, xs / 2.0])
    out = np.empty((h, w, 2))
    for c in range(2):
        out[..., c] = 2.0 * ndimage.map_coordinates(flow[..., c], coords, order=1, mode="nearest")
    return out


def _lk_level(src: np.ndarray, dst: np.ndarray, flow: np.ndarray, cfg: FlowConfig) -> np.ndarray:
    gy_s, gx_s = np.gradient(src)
    gy_d, gx_d = np.gradient(dst)
    box = lambda a: ndimage.uniform_filter(a, size=cfg.window, mode="nearest")  # noqa: E731
    lam = cfg.regularization
    for _ in range(cfg.iterations):
        warped = _sample_clamped(dst, flow)
        # sample dst's gradient at the matched positions; differentiating the
        # warped image would fold in the gradient of the flow itself
        gx_w = _sample_clamped(gx_d, flow)
        gy_w = _sample_clamped(gy_d, flow)
        ix = 0.5 * (gx_s + gx_w)
        iy = 0.5 * (gy_s + gy_w)
        it = warped - src
        sxx = box(ix * ix) + lam
        syy = box(iy * iy) + lam
        sxy = box(ix * iy)
        bx = -box(ix * it)
        by = -box(iy * it)
        det = sxx * syy - sxy * sxy
        du = (syy * bx - sxy * by) / det
        dv = (sxx * by - sxy * bx) / det
        flow[..., 0] += np.clip(du, -1.0, 1.0)
        flow[..., 1] += np.clip(dv, -1.0, 1.0)
        # per-pixel solves break LK's constant-flow-in-window assumption on the
        # next warp; a median pass keeps neighbouring estimates coherent
        for c in range(2):
            flow[..., c] = ndimage.median_filter(flow[..., c], size=cfg.window, mode="nearest")
    return flow


def estimate_flow(src: np.ndarray, dst: np.ndarray, cfg: FlowConfig | None = None) -> np.ndarray:
    """Dense flow from ``src`` to ``dst`` (frames of shape (H, W, 3))."""
    cfg = cfg or FlowConfig()
    src = np.asarray(src)
    dst = np.asarray(dst)
    if src.shape != dst.shape:
        raise FlowError(f"frame shapes differ: {src.shape} vs {dst.shape}")
    h, w = src.shape[:2]
    levels = cfg.levels if cfg.levels is not None else pyramid_levels(h, w)
    pyramid_levels(h, w)  # size check even when levels is forced

    pyr_s = [standardize(grayscale(src))]
    pyr_d = [standardize(grayscale(dst))]
    for _ in range(levels - 1):
        pyr_s.append(_downsample(pyr_s[-1]))
        pyr_d.append(_downsample(pyr_d[-1]))

    flow = np.zeros(pyr_s[-1].shape + (2,))
    for lvl in range(levels - 1, -1, -1):
        if flow.shape[:2] != pyr_s[lvl].shape:
            flow = _upsample_flow(flow, pyr_s[lvl].shape)
        flow = _lk_level(pyr_s[lvl], pyr_d[lvl], flow, cfg)
    return flow.astype(np.float32)


def warp_backward(frame: np.ndarray, flow: np.ndarray, padding: str = "zeros") -> np.ndarray:
    """``out(x, y) = frame(x + u, y + v)`` by bilinear sampling.

    ``padding="zeros"`` makes off-image taps contribute 0; ``"border"``
    clamps coordinates to the image instead.
    """
    frame = np.asarray(frame)
    flow = np.asarray(flow)
    if frame.shape[:2] != flow.shape[:2] or flow.shape[-1] != 2:
        raise FlowError(f"flow {flow.shape} does not match frame {frame.shape}")
    h, w = frame.shape[:2]
    chans = frame.reshape(h, w, -1)
    if padding == "border":
        ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
        coords = np.stack([ys + flow[..., 1], xs + flow[..., 0]])
        out = np.stack([ndimage.map_coordinates(chans[..., c].astype(np.float64), coords, order=1, mode="nearest")
                        for c in range(chans.shape[2])], axis=-1)
        return out.reshape(frame.shape).astype(frame.dtype)
    if padding != "zeros":
        raise ValueError(f"unknown padding {padding!r}")
    idx, wts = bilinear_taps(flow[None], h, w)
    src = chans.reshape(h * w, -1)
    out = np.zeros((h * w, src.shape[1]), dtype=frame.dtype)
    for k in range(4):
        out += (src[idx[k].ravel()] * wts[k].reshape(-1, 1)).astype(frame.dtype)
    return out.reshape(frame.shape)


def occlusion_mask(flow_fwd: np.ndarray, flow_bwd: np.ndarray, tol: float = 1.0) -> np.ndarray:
    """1 where the forward-backward round trip closes within ``tol`` and lands in-image."""
    if flow_fwd.shape != flow_bwd.shape:
        raise FlowError(f"flow shapes differ: {flow_fwd.shape} vs {flow_bwd.shape}")
    h, w = flow_fwd.shape[:2]
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    tx = xs + flow_fwd[..., 0]
    ty = ys + flow_fwd[..., 1]
    inside = (tx >= 0) & (tx <= w - 1) & (ty >= 0) & (ty <= h - 1)
    coords = np.stack([ty, tx])
    back = np.stack([ndimage.map_coordinates(flow_bwd[..., c].astype(np.float64), coords, order=1, mode="nearest")
                     for c in range(2)], axis=-1)
    err = np.linalg.norm(flow_fwd.astype(np.float64) + back, axis=-1)
    return (inside & (err <= tol)).astype(np.uint8)


# .flo2 dump: uint32 height, uint32 width, then float32 (u, v) pairs row-major, all little-endian

def save_flow(path: str | Path, flow: np.ndarray) -> None:
    flow = np.asarray(flow)
    h, w = flow.shape[:2]
    with open(path, "wb") as f:
        f.write(struct.pack("<II", h, w))
        f.write(np.ascontiguousarray(flow, dtype="<f4").tobytes())


def load_flow(path: str | Path) -> np.ndarray:
    blob = Path(path).read_bytes()
    if len(blob) < 8:
        raise FlowError(f"{path}: truncated flow header")
    h, w = struct.unpack("<II", blob[:8])
    expected = 8 + h * w * 2 * 4
    if len(blob) != expected:
        raise FlowError(f"{path}: expected {expected} bytes, found {len(blob)}")
    return np.frombuffer(blob[8:], dtype="<f4").reshape(h, w, 2).astype(np.float32)


class FlowProvider:
    """Lazily estimates and caches flows/masks between frames of one video.

    ``pair(t, s)`` returns (flow t->s, mask) where the mask comes from the
    forward-backward check against flow s->t.  With ``cache_dir`` set,
    flows are persisted as ``.flo2`` files and reused across runs.
    """

    def __init__(self, video: np.ndarray, cfg: FlowConfig | None = None, cache_dir: str | Path | None = None):
        self.video = np.asarray(video)
        self.cfg = cfg or FlowConfig()
        self.cache_dir = Path(cache_dir) if cache_dir is not None else None
        self._flows: dict[tuple[int, int], np.ndarray] = {}

    @property
    def frame_count(self) -> int:
        return len(self.video)

    @property
    def frame_shape(self) -> tuple[int, int]:
        return self.video.shape[1:3]

    def flow(self, t: int, s: int) -> np.ndarray:
        key = (t, s)
        if key not in self._flows:
            path = self.cache_dir / f"flow_{t:05d}_{s:05d}.flo2" if self.cache_dir else None
            if path is not None and path.is_file():
                fl = load_flow(path)
            else:
                fl = estimate_flow(self.video[t], self.video[s], self.cfg)
                if path is not None:
                    path.parent.mkdir(parents=True, exist_ok=True)
                    save_flow(path, fl)
            self._flows[key] = fl
        return self._flows[key]

    def pair(self, t: int, s: int) -> tuple[np.ndarray, np.ndarray]:
        fwd = self.flow(t, s)
        bwd = self.flow(s, t)
        return fwd, occlusion_mask(fwd, bwd, self.cfg.occlusion_tol)
