from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .optim import ParamStore
from .tensor import Tensor

_ACTIVATIONS = {
    "relu": T.relu,
    "tanh": T.tanh,
    "sigmoid": T.sigmoid,
    "linear": lambda x: x,
}


@dataclass(frozen=True)
class MLPArch:
    """Layer widths including input and output, e.g. ``(3, 64, 64, 2)``."""

    widths: tuple[int, ...]
    hidden_activation: str = "relu"
    output_activation: str = "linear"

    def __post_init__(self):
        if len(self.widths) < 2:
            raise ValueError("an MLP needs at least input and output widths")
        for act in (self.hidden_activation, self.output_activation):
            if act not in _ACTIVATIONS:
                raise ValueError(f"unknown activation {act!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kind"] = "mlp"
        d["widths"] = list(self.widths)
        return d


@dataclass(frozen=True)
class ConvArch:
    """Stack of 3x3 same-size convolutions with a logit-space residual head.

    Output is ``sigmoid(z + logit(clip(x[..., skip:skip+3])))`` where ``z``
    is the last convolution's output, so an all-zero network reproduces the
    (clipped) skip image.  With ``bias=False`` the stack has no additive
    terms, so an all-zero input gives ``z = 0`` exactly.
    """

    in_channels: int
    hidden_channels: int
    num_layers: int
    out_channels: int = 3
    skip_offset: int = 0
    bias: bool = True

    def __post_init__(self):
        if self.num_layers < 1:
            raise ValueError("num_layers must be >= 1")
        if self.skip_offset + self.out_channels > self.in_channels:
            raise ValueError("skip channels fall outside the input")

    @property
    def receptive_field(self) -> int:
        return 2 * self.num_layers + 1

    def channel_plan(self) -> list[tuple[int, int]]:
        chans = [self.in_channels] + [self.hidden_channels] * (self.num_layers - 1) + [self.out_channels]
        return list(zip(chans[:-1], chans[1:]))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kind"] = "conv"
        return d


def arch_from_dict(d: dict):
    d = dict(d)
    kind = d.pop("kind")
    if kind == "mlp":
        d["widths"] = tuple(d["widths"])
        return MLPArch(**d)
    if kind == "conv":
        return ConvArch(**d)
    raise ValueError(f"unknown arch kind {kind!r}")


def init_mlp(arch: MLPArch, rng: np.random.Generator, prefix: str = "") -> ParamStore:
    store = ParamStore()
    for i, (fin, fout) in enumerate(zip(arch.widths[:-1], arch.widths[1:])):
        bound = np.sqrt(6.0 / fin)
        store.add(f"{prefix}l{i}.w", rng.uniform(-bound, bound, size=(fin, fout)))
        store.add(f"{prefix}l{i}.b", np.zeros(fout))
    return store


def mlp_forward(params: ParamStore, x, arch: MLPArch, prefix: str = "") -> Tensor:
    x = T.as_tensor(x)
    if x.shape[-1] != arch.widths[0]:
        raise ValueError(f"input width {x.shape[-1]} != arch input width {arch.widths[0]}")
    n_layers = len(arch.widths) - 1
    for i in range(n_layers):
        x = T.linear(x, params[f"{prefix}l{i}.w"], params[f"{prefix}l{i}.b"])
        act = arch.hidden_activation if i < n_layers - 1 else arch.output_activation
        x = _ACTIVATIONS[act](x)
    return x


def init_convnet(arch: ConvArch, rng: np.random.Generator, out_scale: float = 0.1) -> ParamStore:
    store = ParamStore()
    plan = arch.channel_plan()
    for i, (cin, cout) in enumerate(plan):
        bound = np.sqrt(6.0 / (9 * cin))
        if i == len(plan) - 1:
            bound *= out_scale
        store.add(f"c{i}.w", rng.uniform(-bound, bound, size=(3, 3, cin, cout)))
        if arch.bias:
            store.add(f"c{i}.b", np.zeros(cout))
    return store


def conv_net_forward(params: ParamStore, x, arch: ConvArch, anchor: np.ndarray | None = None) -> Tensor:
    """Run the conv stack on an NHWC batch (or a single HWC image).

    The head is ``sigmoid(z + logit(anchor))``; by default the anchor is the
    ``out_channels`` input channels starting at ``arch.skip_offset``.
    """
    x = T.as_tensor(x)
    single = x.data.ndim == 3
    if single:
        x = T.Tensor(x.data[None])
    if x.shape[-1] != arch.in_channels:
        raise ValueError(f"input has {x.shape[-1]} channels, arch expects {arch.in_channels}")
    if min(x.shape[1:3]) < 2:
        raise ValueError("spatial dims too small for the convolution stack")
    if anchor is None:
        skip = x.data[..., arch.skip_offset:arch.skip_offset + arch.out_channels]
    else:
        skip = np.asarray(anchor, dtype=x.data.dtype)
        if single and skip.ndim == 3:
            skip = skip[None]
        if skip.shape != x.data.shape[:-1] + (arch.out_channels,):
            raise ValueError(f"anchor shape {skip.shape} does not match the input batch")
    h = x
    plan = arch.channel_plan()
    for i in range(len(plan)):
        b = params[f"c{i}.b"] if arch.bias else T.Tensor(np.zeros(plan[i][1], dtype=h.dtype))
        h = T.conv3x3(h, params[f"c{i}.w"], b)
        if i < len(plan) - 1:
            h = T.relu(h)
    out = T.residual_sigmoid(h, T.Tensor(skip))
    if single:
        out = T.reshape(out, out.shape[1:])
    return out


@dataclass
class TrainTrace:
    """Loss per optimizer step plus free-form header values."""

    losses: list[float] = field(default_factory=list)
    header: dict = field(default_factory=dict)

    def smoothed(self, window: int = 100) -> np.ndarray:
        arr = np.asarray(self.losses, dtype=np.float64)
        if arr.size == 0:
            return arr
        window = max(1, min(window, arr.size))
        kernel = np.ones(window) / window
        return np.convolve(arr, kernel, mode="valid")
