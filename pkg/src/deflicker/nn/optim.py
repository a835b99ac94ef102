from __future__ import annotations

from collections import OrderedDict
from typing import Iterator

import numpy as np

from .tensor import Tensor


class ParamStore:
    """Named parameter tensors plus per-parameter Adam state."""

    def __init__(self, params: dict[str, np.ndarray] | None = None):
        self.params: OrderedDict[str, Tensor] = OrderedDict()
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.step = 0
        for name, value in (params or {}).items():
            self.add(name, value)

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self.params:
            raise KeyError(f"duplicate parameter {name!r}")
        t = Tensor(np.asarray(value, dtype=np.float32).copy(), requires_grad=True, name=name)
        self.params[name] = t
        self.m[name] = np.zeros_like(t.data)
        self.v[name] = np.zeros_like(t.data)
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __iter__(self) -> Iterator[str]:
        return iter(self.params)

    def __len__(self) -> int:
        return len(self.params)

    def items(self):
        return self.params.items()

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: t.data for k, t in self.params.items()}

    def num_parameters(self) -> int:
        return sum(t.data.size for t in self.params.values())

    def astype(self, dtype) -> "ParamStore":
        """Copy with every parameter cast (used by float64 gradient checks)."""
        out = ParamStore()
        for k, t in self.params.items():
            out.params[k] = Tensor(t.data.astype(dtype), requires_grad=True, name=k)
            out.m[k] = np.zeros_like(out.params[k].data)
            out.v[k] = np.zeros_like(out.params[k].data)
        return out


def adam_step(
    store: ParamStore,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> ParamStore:
    """Bias-corrected Adam update, in place; returns ``store`` for chaining."""
    missing = [k for k, t in store.params.items() if t.grad is None]
    if missing:
        raise RuntimeError(f"adam_step: no gradient for {missing}")
    store.step += 1
    bc1 = 1.0 - beta1 ** store.step
    bc2 = 1.0 - beta2 ** store.step
    for k, t in store.params.items():
        g = t.grad.astype(t.data.dtype, copy=False)
        m, v = store.m[k], store.v[k]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        t.data -= (lr * (m / bc1) / (np.sqrt(v / bc2) + eps)).astype(t.data.dtype)
    return store


def cosine_lr(base_lr: float, step: int, total_steps: int, decay_start: float = 0.5,
              final_ratio: float = 0.1) -> float:
    """Constant ``base_lr`` until ``decay_start * total_steps``, then cosine decay to ``final_ratio * base_lr``."""
    start = int(decay_start * total_steps)
    if step < start:
        return base_lr
    frac = min((step - start) / max(total_steps - start, 1), 1.0)
    return base_lr * (final_ratio + (1.0 - final_ratio) * 0.5 * (1.0 + np.cos(np.pi * frac)))
