"""Shared bilinear sampling helpers."""

from __future__ import annotations

import numpy as np


def bilinear_taps(flow: np.ndarray, h: int, w: int):
    """Flat gather indices and weights for bilinear sampling at (x+u, y+v).

    Taps that fall outside the image get weight 0 and index 0.
    """
    n = flow.shape[0]
    ys, xs = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    px = xs[None] + flow[..., 0].astype(np.float64)
    py = ys[None] + flow[..., 1].astype(np.float64)
    x0 = np.floor(px)
    y0 = np.floor(py)
    fx = px - x0
    fy = py - y0
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)
    base = (np.arange(n) * h * w)[:, None, None]
    idx = np.empty((4, n, h, w), dtype=np.int64)
    wts = np.empty((4, n, h, w), dtype=np.float64)
    for k, (dy, dx, wk) in enumerate((
        (0, 0, (1 - fx) * (1 - fy)),
        (0, 1, fx * (1 - fy)),
        (1, 0, (1 - fx) * fy),
        (1, 1, fx * fy),
    )):
        xx, yy = x0 + dx, y0 + dy
        inside = (xx >= 0) & (xx < w) & (yy >= 0) & (yy < h)
        idx[k] = np.where(inside, base + yy * w + xx, 0)
        wts[k] = np.where(inside, wk, 0.0)
    return idx, wts
