"""Central finite-difference checks for the autodiff ops."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


@dataclass
class GradCheckResult:
    name: str
    n_checked: int
    n_passed: int
    max_rel_error: float

    @property
    def pass_rate(self) -> float:
        return self.n_passed / max(self.n_checked, 1)


def relative_error(analytic: float, numeric: float, floor: float = 1e-6) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def check_gradients(
    fn: Callable[[Sequence[Tensor]], Tensor],
    inputs: Sequence[np.ndarray],
    *,
    name: str = "op",
    n_samples: int = 1000,
    eps: float = 1e-3,
    rel_tol: float = 1e-3,
    seed: int = 0,
) -> GradCheckResult:
    """Compare reverse-mode gradients of a scalar ``fn`` against central differences.

    All inputs are promoted to float64.  Coordinates are drawn uniformly
    over the concatenation of every input (with replacement when there are
    fewer than ``n_samples`` entries).
    """
    rng = np.random.default_rng(seed)
    arrays = [np.array(a, dtype=np.float64) for a in inputs]

    leaves = [Tensor(a, requires_grad=True) for a in arrays]
    out = fn(leaves)
    if out.data.size != 1:
        raise ValueError("check_gradients needs a scalar-valued function")
    out.backward()
    analytic = [np.zeros_like(a) if t.grad is None else t.grad for a, t in zip(arrays, leaves)]

    sizes = np.array([a.size for a in arrays])
    total = int(sizes.sum())
    replace = total < n_samples
    flat_idx = rng.choice(total, size=n_samples, replace=replace)
    offsets = np.concatenate([[0], np.cumsum(sizes)])

    def evaluate() -> float:
        return float(fn([Tensor(a) for a in arrays]).data)

    passed = 0
    worst = 0.0
    for fi in flat_idx:
        which = int(np.searchsorted(offsets, fi, side="right") - 1)
        local = int(fi - offsets[which])
        arr = arrays[which].reshape(-1)
        orig = arr[local]
        arr[local] = orig + eps
        f_plus = evaluate()
        arr[local] = orig - eps
        f_minus = evaluate()
        arr[local] = orig
        numeric = (f_plus - f_minus) / (2 * eps)
        err = relative_error(float(analytic[which].reshape(-1)[local]), numeric)
        worst = max(worst, err)
        passed += err < rel_tol
    return GradCheckResult(name, n_samples, int(passed), worst)


def standard_suite(seed: int = 0) -> list[tuple[str, Callable, list[np.ndarray]]]:
    """(name, scalar fn, inputs) for every differentiable op and both network kinds.

    Each op's output is contracted with a fixed random tensor so that the
    scalar depends on every output coordinate.
    """
    from . import tensor as T
    from .layers import ConvArch, MLPArch, conv_net_forward, init_convnet, init_mlp, mlp_forward
    from .optim import ParamStore

    rng = np.random.default_rng(seed)

    def proj(shape):
        r = rng.normal(size=shape)
        return lambda out: T.sum_all(T.mul(out, Tensor(r)))

    suite = []

    def add(name, fn, inputs, out_shape):
        p = proj(out_shape)
        suite.append((name, lambda ts, fn=fn, p=p: p(fn(ts)), inputs))

    n = lambda *s: rng.normal(size=s)  # noqa: E731
    add("add", lambda ts: T.add(*ts), [n(20, 50), n(50)], (20, 50))
    add("sub", lambda ts: T.sub(*ts), [n(20, 50), n(20, 1)], (20, 50))
    add("mul", lambda ts: T.mul(*ts), [n(20, 50), n(20, 50)], (20, 50))
    add("square", lambda ts: T.square(ts[0]), [n(1000)], (1000,))
    add("abs", lambda ts: T.absolute(ts[0]), [n(1000)], (1000,))
    add("relu", lambda ts: T.relu(ts[0]), [n(1000)], (1000,))
    add("tanh", lambda ts: T.tanh(ts[0]), [n(1000)], (1000,))
    add("sigmoid", lambda ts: T.sigmoid(ts[0]), [2 * n(1000)], (1000,))
    add("sin", lambda ts: T.sin(ts[0]), [n(1000)], (1000,))
    suite.append(("sum", lambda ts: T.sum_all(T.square(ts[0])), [n(1000)]))
    suite.append(("mean", lambda ts: T.mean(T.square(ts[0])), [n(1000)]))
    add("reshape", lambda ts: T.reshape(ts[0], (25, 40)), [n(1000)], (25, 40))
    add("concat", lambda ts: T.concat(ts, axis=-1), [n(40, 10), n(40, 15)], (40, 25))
    add("take_channels", lambda ts: T.take_channels(ts[0], 1, 4), [n(200, 6)], (200, 3))
    add("matmul", lambda ts: T.matmul(*ts), [n(20, 30), n(30, 20)], (20, 20))
    add("linear", lambda ts: T.linear(*ts), [n(40, 16), n(16, 12), n(12)], (40, 12))
    add("conv3x3", lambda ts: T.conv3x3(*ts), [n(2, 8, 8, 4), 0.3 * n(3, 3, 4, 5), n(5)], (2, 8, 8, 5))
    add("positional_encoding", lambda ts: T.positional_encoding(ts[0], 2),
        [rng.uniform(-1, 1, size=(500, 2))], (500, 8))
    skip = rng.uniform(0, 1, size=(2, 10, 10, 3))
    add("residual_sigmoid", lambda ts: T.residual_sigmoid(ts[0], Tensor(skip)), [n(2, 10, 10, 3)], (2, 10, 10, 3))
    flow = rng.uniform(-2.5, 2.5, size=(2, 12, 12, 2))
    add("bilinear_warp", lambda ts: T.bilinear_warp(ts[0], flow), [n(2, 12, 12, 3)], (2, 12, 12, 3))
    target = rng.normal(size=(20, 50))
    suite.append(("mse", lambda ts: T.mse(ts[0], target), [n(20, 50)]))
    mask = (rng.uniform(size=(2, 12, 12)) > 0.3).astype(np.uint8)
    suite.append(("masked_l1", lambda ts: T.masked_l1(ts[0], ts[1], mask), [n(2, 12, 12, 3), n(2, 12, 12, 3)]))

    march = MLPArch((3, 16, 16, 2), output_activation="tanh")
    mstore = init_mlp(march, rng)
    mnames = list(mstore)
    mx = rng.uniform(-1, 1, size=(30, 3))

    def mlp_fn(ts):
        ps = ParamStore()
        for k, t in zip(mnames, ts[1:]):
            ps.params[k] = t
        return mlp_forward(ps, ts[0], march)

    add("mlp", mlp_fn, [mx] + [mstore[k].data.astype(np.float64) for k in mnames], (30, 2))

    carch = ConvArch(in_channels=6, hidden_channels=6, num_layers=3)
    cstore = init_convnet(carch, rng, out_scale=1.0)
    cnames = list(cstore)
    cx = rng.uniform(0, 1, size=(1, 8, 8, 6))

    def conv_fn(ts):
        ps = ParamStore()
        for k, t in zip(cnames, ts):
            ps.params[k] = t
        return conv_net_forward(ps, Tensor(cx), carch)

    add("convnet", conv_fn, [cstore[k].data.astype(np.float64) for k in cnames], (1, 8, 8, 3))
    return suite
