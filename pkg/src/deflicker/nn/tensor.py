"""Minimal reverse-mode autodiff over numpy arrays.

Each op returns a new :class:`Tensor` holding a closure that pushes the
upstream gradient to its parents.  Graphs are built eagerly during the
forward pass and released after :meth:`Tensor.backward`.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from ..sampling import bilinear_taps


class NonFiniteError(FloatingPointError):
    """Raised as soon as an op produces NaN or Inf."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data)
        if self.data.dtype.kind != "f":
            self.data = self.data.astype(np.float32)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self._op = "leaf"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self._op}, requires_grad={self.requires_grad})"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, grad: np.ndarray | None = None) -> None:
        if self._backward is None:
            raise RuntimeError("backward() called on a tensor with no recorded forward graph")
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without an explicit gradient needs a scalar output")
            grad = np.ones_like(self.data)

        order = _topo_order(self)
        grads: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=self.data.dtype)}
        for node in order:
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in node._backward(g):
                if pg is None or not _needs_grad(parent):
                    continue
                pg = pg.astype(parent.data.dtype, copy=False)
                if not np.isfinite(pg).all():
                    raise NonFiniteError(f"non-finite gradient flowing out of '{node._op}'")
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
        # free the graph so a second backward is an error, as is stale reuse
        for node in order:
            node._backward = None
            node._parents = ()

    # operator sugar -------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _needs_grad(t: Tensor) -> bool:
    return t.requires_grad or t._backward is not None


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    order.reverse()
    return order


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x))


def _make(data: np.ndarray, parents: Sequence[Tensor], backward, op: str) -> Tensor:
    if not np.isfinite(data).all():
        raise NonFiniteError(f"non-finite value produced by '{op}'")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = False
    out.name = None
    out._op = op
    if any(_needs_grad(p) for p in parents):
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# elementwise ----------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return ((a, _unbroadcast(g, a.shape)), (b, _unbroadcast(g, b.shape)))

    return _make(a.data + b.data, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return ((a, _unbroadcast(g, a.shape)), (b, _unbroadcast(-g, b.shape)))

    return _make(a.data - b.data, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return ((a, _unbroadcast(g * b.data, a.shape)), (b, _unbroadcast(g * a.data, b.shape)))

    return _make(a.data * b.data, (a, b), bw, "mul")


def square(a: Tensor) -> Tensor:
    def bw(g):
        return ((a, 2.0 * a.data * g),)

    return _make(a.data * a.data, (a,), bw, "square")


def absolute(a: Tensor) -> Tensor:
    def bw(g):
        return ((a, np.sign(a.data) * g),)

    return _make(np.abs(a.data), (a,), bw, "abs")


def relu(a: Tensor) -> Tensor:
    out = np.maximum(a.data, 0)

    def bw(g):
        return ((a, g * (a.data > 0)),)

    return _make(out, (a,), bw, "relu")


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)

    def bw(g):
        return ((a, g * (1 - out * out)),)

    return _make(out, (a,), bw, "tanh")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # exp(-|x|) never overflows; pick the matching branch per sign
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype, copy=False)


def sigmoid(a: Tensor) -> Tensor:
    out = _sigmoid(a.data)

    def bw(g):
        return ((a, g * out * (1 - out)),)

    return _make(out, (a,), bw, "sigmoid")


def sin(a: Tensor) -> Tensor:
    def bw(g):
        return ((a, g * np.cos(a.data)),)

    return _make(np.sin(a.data), (a,), bw, "sin")


# reductions / shape ---------------------------------------------------------

def sum_all(a: Tensor) -> Tensor:
    def bw(g):
        return ((a, np.broadcast_to(g, a.shape).astype(a.dtype)),)

    return _make(np.asarray(a.data.sum(dtype=np.float64)), (a,), bw, "sum")


def mean(a: Tensor) -> Tensor:
    n = a.data.size

    def bw(g):
        return ((a, np.broadcast_to(g / n, a.shape).astype(a.dtype)),)

    return _make(np.asarray(a.data.mean(dtype=np.float64)), (a,), bw, "mean")


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    def bw(g):
        return ((a, g.reshape(a.shape)),)

    return _make(a.data.reshape(shape), (a,), bw, "reshape")


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def bw(g):
        out = []
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            out.append((t, g[tuple(idx)]))
        return out

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, bw, "concat")


def take_channels(a: Tensor, lo: int, hi: int) -> Tensor:
    """Slice ``a[..., lo:hi]``."""

    def bw(g):
        full = np.zeros_like(a.data)
        full[..., lo:hi] = g
        return ((a, full),)

    return _make(a.data[..., lo:hi], (a,), bw, "take_channels")


# linear algebra -------------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return ((a, g @ b.data.T), (b, a.data.T @ g))

    return _make(a.data @ b.data, (a, b), bw, "matmul")


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """``x @ w + b`` for a 2-D batch ``x``."""

    def bw(g):
        return ((x, g @ w.data.T), (w, x.data.T @ g), (b, g.sum(axis=0)))

    return _make(x.data @ w.data + b.data, (x, w, b), bw, "linear")


def conv3x3(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Same-size 3x3 convolution, stride 1, zero padding 1.

    ``x`` is NHWC, ``w`` has shape (3, 3, C_in, C_out), ``b`` has shape (C_out,).
    Implemented as nine shifted matmuls over the flattened padded image so
    every operand is a contiguous row block.
    """
    n, h, wd, cin = x.shape
    cout = w.shape[3]
    if w.shape[:3] != (3, 3, cin):
        raise ValueError(f"kernel {w.shape} does not match input channels {cin}")
    hp, wp = h + 2, wd + 2
    xp = np.zeros((n, hp, wp, cin), dtype=x.dtype)
    xp[:, 1:-1, 1:-1] = x.data
    flat = xp.reshape(-1, cin)
    rows = flat.shape[0]
    base = wp + 1
    span = rows - 2 * base
    offsets = [base + dy * wp + dx for dy in (-1, 0, 1) for dx in (-1, 0, 1)]
    kern = w.data.reshape(9, cin, cout)

    out = np.zeros((rows, cout), dtype=np.result_type(x.dtype, w.dtype))
    acc = out[base:base + span]
    for k, off in enumerate(offsets):
        acc += flat[off:off + span] @ kern[k]
    res = out.reshape(n, hp, wp, cout)[:, 1:-1, 1:-1] + b.data

    def bw(g):
        gp = np.zeros((n, hp, wp, cout), dtype=g.dtype)
        gp[:, 1:-1, 1:-1] = g
        gflat = gp.reshape(-1, cout)
        gsrc = gflat[base:base + span]
        gk = np.empty_like(kern)
        gin = np.zeros_like(flat)
        for k, off in enumerate(offsets):
            gk[k] = flat[off:off + span].T @ gsrc
            gin[off:off + span] += gsrc @ kern[k].T
        gx = gin.reshape(n, hp, wp, cin)[:, 1:-1, 1:-1]
        return ((x, gx), (w, gk.reshape(w.shape)), (b, g.sum(axis=(0, 1, 2))))

    return _make(np.ascontiguousarray(res), (x, w, b), bw, "conv3x3")


# domain ops -----------------------------------------------------------------

def positional_encoding(x: Tensor, num_octaves: int) -> Tensor:
    """Sinusoidal lifting of every column of a (N, D) batch.

    Output columns for input column d are
    ``[sin(2^0 pi x), cos(2^0 pi x), ..., sin(2^(K-1) pi x), cos(2^(K-1) pi x)]``
    and the per-column blocks are concatenated in column order.
    """
    if num_octaves < 1:
        raise ValueError("num_octaves must be >= 1")
    freqs = (np.pi * 2.0 ** np.arange(num_octaves)).astype(x.dtype)
    n, d = x.shape
    arg = x.data[:, :, None] * freqs  # (N, D, K)
    s, c = np.sin(arg), np.cos(arg)
    out = np.stack([s, c], axis=-1).reshape(n, d * 2 * num_octaves)

    def bw(g):
        g = g.reshape(n, d, num_octaves, 2)
        gx = (g[..., 0] * c * freqs - g[..., 1] * s * freqs).sum(axis=-1)
        return ((x, gx),)

    return _make(out, (x,), bw, "positional_encoding")


def residual_sigmoid(z: Tensor, skip: Tensor, eps: float = 1e-3) -> Tensor:
    """``sigmoid(z + logit(clip(skip, eps, 1 - eps)))``.

    With ``z == 0`` the output is the clipped skip image; no gradient flows
    into ``skip`` (it is treated as a fixed anchor).
    """
    s = np.clip(skip.data, eps, 1 - eps)
    base = np.log(s) - np.log1p(-s)
    out = _sigmoid(z.data + base.astype(z.dtype))

    def bw(g):
        return ((z, g * out * (1 - out)),)

    return _make(out, (z,), bw, "residual_sigmoid")


def bilinear_warp(image: Tensor, flow: np.ndarray) -> Tensor:
    """Backward-warp an NHWC (or HWC) image by a fixed flow; differentiable in ``image``.

    Samples falling outside the image contribute zero.
    """
    squeeze = image.data.ndim == 3
    img = image.data[None] if squeeze else image.data
    fl = flow[None] if flow.ndim == 3 else flow
    n, h, w, c = img.shape
    idx, wts = bilinear_taps(fl, h, w)  # (4, N, H, W) flat indices into N*H*W, weights
    src = img.reshape(-1, c)
    out = np.zeros((n * h * w, c), dtype=img.dtype)
    for k in range(4):
        out += src[idx[k].ravel()] * wts[k].reshape(-1, 1)
    out = out.reshape(n, h, w, c)
    if squeeze:
        out = out[0]

    def bw(g):
        gflat = g.reshape(-1, c)
        gin = np.zeros((n * h * w, c), dtype=np.float64)
        for k in range(4):
            ii = idx[k].ravel()
            ww = wts[k].ravel()
            for ch in range(c):
                gin[:, ch] += np.bincount(ii, weights=gflat[:, ch] * ww, minlength=n * h * w)
        gin = gin.reshape(img.shape)
        return ((image, gin[0] if squeeze else gin),)

    return _make(out, (image,), bw, "bilinear_warp")


# losses -----------------------------------------------------------------------

def mse(pred: Tensor, target) -> Tensor:
    target = target.data if isinstance(target, Tensor) else np.asarray(target)
    diff = pred.data - target
    n = diff.size

    def bw(g):
        return ((pred, (2.0 / n) * g * diff),)

    return _make(np.asarray(np.mean(np.square(diff, dtype=np.float64))), (pred,), bw, "mse")


def masked_l1(pred: Tensor, target: Tensor, mask: np.ndarray) -> Tensor:
    """Mean |pred - target| over pixels where ``mask`` is 1 (all channels).

    ``mask`` has the shape of ``pred`` without the channel axis.  Returns 0
    when the mask is empty.
    """
    target = as_tensor(target)
    m = mask.astype(pred.dtype)[..., None]
    c = pred.shape[-1]
    count = float(m.sum()) * c
    diff = pred.data - target.data
    if count == 0:
        val = np.asarray(0.0)
    else:
        val = np.asarray((np.abs(diff) * m).sum(dtype=np.float64) / count)

    def bw(g):
        if count == 0:
            z = np.zeros_like(diff)
            return ((pred, z), (target, z))
        gd = g * np.sign(diff) * m / count
        return ((pred, gd), (target, -gd))

    return _make(val, (pred, target), bw, "masked_l1")


def parameters_of(tensors: Iterable[Tensor]) -> list[Tensor]:
    return [t for t in tensors if t.requires_grad]
