"""A small dense-tensor engine with reverse-mode differentiation.

Every tensor remembers the tensors it was computed from and a closure that
maps the output gradient to input gradients. ``backward`` walks the graph in
reverse creation order, so each node is visited once and after all of its
consumers. Values are float64 unless a ``precision`` block selects another
float type (float32 is an opt-in for faster training); any op that produces NaN or
Inf raises ``FloatingPointError`` immediately.

Convolutions use the cross-correlation convention (no kernel flip).
"""

from __future__ import annotations

import contextlib
import itertools
import json
import struct
import threading
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import erf, expit

_ids = itertools.count()
_state = threading.local()


def grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


def default_dtype() -> np.dtype:
    return getattr(_state, "dtype", np.dtype(np.float64))


@contextlib.contextmanager
def precision(dtype):
    """Store every tensor created inside the block as ``dtype``."""
    dtype = np.dtype(dtype)
    if dtype.kind != "f":
        raise TypeError(f"precision needs a float dtype, got {dtype}")
    prev = default_dtype()
    _state.dtype = dtype
    try:
        yield
    finally:
        _state.dtype = prev


@contextlib.contextmanager
def no_grad():
    """Build no graph inside the block (inference)."""
    prev = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_id", "_op")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=default_dtype())
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self._id = next(_ids)
        self._op = "leaf"

    # -- plumbing
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self._op}, requires_grad={self.requires_grad})"

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Accumulate d(self)/d(leaf) into ``.grad`` of every leaf that requires it."""
        if grad is None:
            if self.data.size != 1:
                raise ValueError(f"backward() needs a scalar loss, got shape {self.shape}")
            grad = np.ones_like(self.data)
        if not self.requires_grad:
            raise ValueError("loss does not depend on any tensor that requires grad")
        nodes: dict[int, Tensor] = {}
        stack = [self]
        while stack:
            n = stack.pop()
            if id(n) in nodes:
                continue
            nodes[id(n)] = n
            stack.extend(p for p in n._parents if p.requires_grad)
        grads = {id(self): np.asarray(grad, dtype=self.data.dtype)}
        for n in sorted(nodes.values(), key=lambda t: t._id, reverse=True):
            g = grads.pop(id(n), None)
            if g is None:
                continue
            if n._backward is None:
                n.grad = g.copy() if n.grad is None else n.grad + g
                continue
            for p, pg in zip(n._parents, n._backward(g)):
                if pg is None or not p.requires_grad:
                    continue
                key = id(p)
                grads[key] = grads[key] + pg if key in grads else pg

    # -- operators
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

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(np.array(data, dtype=default_dtype()), requires_grad)


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward: Callable, op: str) -> Tensor:
    if not np.isfinite(data).all():
        raise FloatingPointError(f"{op} produced non-finite values")
    out = Tensor(data)
    out._op = op
    if grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (reverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ------------------------------------------------------------ elementwise


def _need(t: Tensor, fn):
    """Gradient for ``t`` from ``fn()``, skipped when ``t`` is a constant."""
    return fn() if t.requires_grad else None


def add(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    return _make(a.data + b.data, (a, b),
                 lambda g: (_need(a, lambda: unbroadcast(g, a.shape)),
                            _need(b, lambda: unbroadcast(g, b.shape))), "add")


def sub(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    return _make(a.data - b.data, (a, b),
                 lambda g: (_need(a, lambda: unbroadcast(g, a.shape)),
                            _need(b, lambda: unbroadcast(-g, b.shape))), "sub")


def mul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    return _make(a.data * b.data, (a, b),
                 lambda g: (_need(a, lambda: unbroadcast(g * b.data, a.shape)),
                            _need(b, lambda: unbroadcast(g * a.data, b.shape))), "mul")


def div(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    out = a.data / b.data
    return _make(out, (a, b),
                 lambda g: (_need(a, lambda: unbroadcast(g / b.data, a.shape)),
                            _need(b, lambda: unbroadcast(-g * out / b.data, b.shape))),
                 "div")


def exp(x: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        out = np.exp(x.data)
    return _make(out, (x,), lambda g: (g * out,), "exp")


def log(x: Tensor) -> Tensor:
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(x.data)
    return _make(out, (x,), lambda g: (g / x.data,), "log")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _make(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,), "relu")


def sigmoid(x: Tensor) -> Tensor:
    s = expit(x.data)
    return _make(s, (x,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def silu(x: Tensor) -> Tensor:
    s = expit(x.data)
    return _make(x.data * s, (x,), lambda g: (g * (s + x.data * s * (1.0 - s)),), "silu")


def softplus(x: Tensor) -> Tensor:
    return _make(np.logaddexp(0.0, x.data), (x,), lambda g: (g * expit(x.data),), "softplus")


_SQRT2 = np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


def gelu(x: Tensor) -> Tensor:
    """Exact (erf) GELU."""
    cdf = 0.5 * (1.0 + erf(x.data / _SQRT2))
    pdf = _INV_SQRT2PI * np.exp(-0.5 * x.data**2)
    return _make(x.data * cdf, (x,), lambda g: (g * (cdf + x.data * pdf),), "gelu")


# ------------------------------------------------------------- structure


def matmul(a, b) -> Tensor:
    """Batched matrix product over leading dims (both operands at least 2-D)."""
    a, b = _lift(a), _lift(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul operands must be at least 2-D")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")

    if b.ndim == 2 and a.ndim > 2:
        # (..., K) @ (K, N): fold leading dims so each product is one BLAS call
        lead = a.shape[:-1]
        a2 = a.data.reshape(-1, a.shape[-1])

        def back(g):
            g2 = g.reshape(-1, g.shape[-1])
            ga = _need(a, lambda: (g2 @ b.data.T).reshape(a.shape))
            gb = _need(b, lambda: a2.T @ g2)
            return ga, gb

        return _make((a2 @ b.data).reshape(*lead, b.shape[1]), (a, b), back, "matmul")

    def back(g):
        ga = _need(a, lambda: unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
        gb = _need(b, lambda: unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape))
        return ga, gb

    return _make(a.data @ b.data, (a, b), back, "matmul")


def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    out = []
    for ax in axes:
        if not -ndim <= ax < ndim:
            raise ValueError(f"axis {ax} out of range for {ndim}-D tensor")
        out.append(ax % ndim)
    return tuple(out)


def sum_(x: Tensor, axis=None, keepdims=False) -> Tensor:
    axes = _norm_axis(axis, x.ndim)
    out = x.data.sum(axis=axes, keepdims=keepdims)

    def back(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.shape),)

    return _make(np.asarray(out), (x,), back, "sum")


def mean(x: Tensor, axis=None, keepdims=False) -> Tensor:
    axes = _norm_axis(axis, x.ndim)
    n = int(np.prod([x.shape[a] for a in axes]))
    return mul(sum_(x, axes, keepdims), 1.0 / n)


def reshape(x: Tensor, shape) -> Tensor:
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),), "reshape")


def transpose(x: Tensor, axes) -> Tensor:
    axes = tuple(axes) if axes else tuple(reversed(range(x.ndim)))
    inv = np.argsort(axes)
    return _make(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),), "transpose")


def _is_basic(idx) -> bool:
    parts = idx if isinstance(idx, tuple) else (idx,)
    return all(p is None or p is Ellipsis or isinstance(p, (slice, int)) for p in parts)


def getitem(x: Tensor, idx) -> Tensor:
    basic = _is_basic(idx)

    def back(g):
        full = np.zeros_like(x.data)
        if basic:
            full[idx] = g
        else:
            np.add.at(full, idx, g)
        return (full,)

    return _make(np.array(x.data[idx]), (x,), back, "getitem")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_lift(t) for t in tensors]
    ax = _norm_axis(axis, tensors[0].ndim)[0]
    sizes = [t.shape[ax] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    return _make(np.concatenate([t.data for t in tensors], axis=ax), tensors,
                 lambda g: tuple(np.split(g, splits, axis=ax)), "concat")


def pad_last(x: Tensor, left: int, right: int) -> Tensor:
    """Zero-pad the last axis."""
    width = [(0, 0)] * (x.ndim - 1) + [(left, right)]
    n = x.shape[-1]
    return _make(np.pad(x.data, width), (x,), lambda g: (g[..., left:left + n],), "pad")


# ------------------------------------------------------- normalizations


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    ax = _norm_axis(axis, x.ndim)[0]
    z = x.data - x.data.max(axis=ax, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=ax, keepdims=True)
    return _make(p, (x,), lambda g: (p * (g - (g * p).sum(axis=ax, keepdims=True)),), "softmax")


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    ax = _norm_axis(axis, x.ndim)[0]
    z = x.data - x.data.max(axis=ax, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=ax, keepdims=True))
    out = z - lse
    p = np.exp(out)
    return _make(out, (x,), lambda g: (g - p * g.sum(axis=ax, keepdims=True),), "log_softmax")


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc**2).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv

    def back(g):
        gx_hat = g * gamma.data
        gx = inv * (gx_hat - gx_hat.mean(axis=-1, keepdims=True)
                    - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True))
        lead = tuple(range(g.ndim - 1))
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _make(xhat * gamma.data + beta.data, (x, gamma, beta), back, "layer_norm")


def rms_norm(x: Tensor, weight: Tensor, eps: float = 1e-5) -> Tensor:
    inv = 1.0 / np.sqrt((x.data**2).mean(axis=-1, keepdims=True) + eps)
    xhat = x.data * inv

    def back(g):
        gx_hat = g * weight.data
        gx = inv * (gx_hat - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True))
        return gx, (g * xhat).sum(axis=tuple(range(g.ndim - 1)))

    return _make(xhat * weight.data, (x, weight), back, "rms_norm")


def batchnorm1d(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    train: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel normalization of a (b, c, T) tensor over (b, T).

    In train mode batch statistics are used and the running buffers are
    updated in place (unbiased variance); in eval mode the buffers are used.
    """
    if x.ndim != 3:
        raise ValueError(f"batchnorm1d expects (b, c, T), got {x.shape}")
    b, c, T = x.shape
    g_ = gamma.data[None, :, None]
    if train:
        m = b * T
        if m <= 1:
            raise ValueError("train-mode batchnorm needs more than one value per channel")
        mu = x.data.mean(axis=(0, 2), keepdims=True)
        xc = x.data - mu
        var = (xc**2).mean(axis=(0, 2), keepdims=True)
        inv = 1.0 / np.sqrt(var + eps)
        xhat = xc * inv
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu.reshape(c)
        running_var *= 1.0 - momentum
        running_var += momentum * var.reshape(c) * m / (m - 1)

        def back(g):
            gx_hat = g * g_
            gx = inv * (gx_hat - gx_hat.mean(axis=(0, 2), keepdims=True)
                        - xhat * (gx_hat * xhat).mean(axis=(0, 2), keepdims=True))
            return gx, (g * xhat).sum(axis=(0, 2)), g.sum(axis=(0, 2))
    else:
        inv = 1.0 / np.sqrt(running_var[None, :, None] + eps)
        xhat = (x.data - running_mean[None, :, None]) * inv

        def back(g):
            return g * g_ * inv, (g * xhat).sum(axis=(0, 2)), g.sum(axis=(0, 2))

    return _make(xhat * g_ + beta.data[None, :, None], (x, gamma, beta), back, "batchnorm1d")


def dropout(x: Tensor, p: float, rng: np.random.Generator | None, train: bool) -> Tensor:
    """Inverted dropout; identity when not training or ``p == 0``."""
    if not train or p == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in train mode needs an rng")
    keep = ((rng.random(x.shape) >= p) / (1.0 - p)).astype(x.data.dtype)
    return _make(x.data * keep, (x,), lambda g: (g * keep,), "dropout")


# ---------------------------------------------------------- convolutions


def _padding(padding, k, dilation):
    if isinstance(padding, str):
        if padding == "same":
            p = (k // 2) * dilation
            return p, p
        if padding == "causal":
            return (k - 1) * dilation, 0
        raise ValueError(f"unknown padding {padding!r}")
    if isinstance(padding, int):
        return padding, padding
    return tuple(padding)


def conv1d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
           dilation: int = 1, padding=0) -> Tensor:
    """Cross-correlation of (b, c_in, T) with (c_out, c_in, K), stride 1."""
    if x.ndim != 3 or weight.ndim != 3:
        raise ValueError(f"conv1d expects (b, c_in, T) and (c_out, c_in, K); got {x.shape}, {weight.shape}")
    b, cin, T = x.shape
    cout, cin_w, K = weight.shape
    if cin != cin_w:
        raise ValueError(f"input has {cin} channels but kernel expects {cin_w}")
    left, right = _padding(padding, K, dilation)
    Tp = T + left + right
    span = (K - 1) * dilation + 1
    if span > Tp:
        raise ValueError(f"kernel span {span} exceeds padded input length {Tp}")
    To = Tp - span + 1
    # channel-last im2col so forward and backward are single GEMMs:
    # cols[b*To + t, j*cin + ci] = xp[b, t + j*d, ci]
    xp = np.pad(x.data.transpose(0, 2, 1), ((0, 0), (left, right), (0, 0)))
    cols = np.concatenate([xp[:, j * dilation:j * dilation + To, :] for j in range(K)], axis=2)
    cols = cols.reshape(b * To, K * cin)
    w2 = weight.data.transpose(2, 1, 0).reshape(K * cin, cout)
    out = (cols @ w2).reshape(b, To, cout)
    if bias is not None:
        out = out + bias.data
    out = out.transpose(0, 2, 1)

    def back(g):
        g2 = g.transpose(0, 2, 1).reshape(b * To, cout)
        gw = _need(weight, lambda: (cols.T @ g2).reshape(K, cin, cout).transpose(2, 1, 0))
        gx = None
        if x.requires_grad:
            gcols = (g2 @ w2.T).reshape(b, To, K, cin)
            gxp = np.zeros_like(xp)
            for j in range(K):
                gxp[:, j * dilation:j * dilation + To, :] += gcols[:, :, j, :]
            gx = gxp[:, left:left + T, :].transpose(0, 2, 1)
        gb = g.sum(axis=(0, 2)) if bias is not None else None
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _make(out, parents, back, "conv1d")


def depthwise_conv1d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
                     dilation: int = 1, padding=0) -> Tensor:
    """Per-channel cross-correlation of (b, c, T) with a (c, K) kernel."""
    b, c, T = x.shape
    K = weight.shape[-1]
    w = weight.data.reshape(c, K)
    left, right = _padding(padding, K, dilation)
    To = T + left + right - (K - 1) * dilation
    if To < 1:
        raise ValueError("kernel span exceeds padded input length")
    xp = np.pad(x.data, ((0, 0), (0, 0), (left, right)))
    out = np.zeros((b, c, To), x.data.dtype)
    for j in range(K):
        out += w[None, :, j, None] * xp[:, :, j * dilation:j * dilation + To]
    if bias is not None:
        out += bias.data[None, :, None]

    def back(g):
        gxp = np.zeros_like(xp)
        gw = np.empty((c, K), x.data.dtype)
        for j in range(K):
            sl = slice(j * dilation, j * dilation + To)
            gxp[:, :, sl] += w[None, :, j, None] * g
            gw[:, j] = (g * xp[:, :, sl]).sum(axis=(0, 2))
        gb = g.sum(axis=(0, 2)) if bias is not None else None
        return gxp[:, :, left:left + T], gw.reshape(weight.shape), gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _make(out, parents, back, "depthwise_conv1d")


# ------------------------------------------------------- selective scan


_SCAN_BLOCK = 32


def selective_scan(u: Tensor, delta: Tensor, A: Tensor, B: Tensor, C: Tensor) -> Tensor:
    """Diagonal selective state-space recurrence.

    Shapes: u, delta (b, T, D); A (D, N); B, C (b, T, N). Per step::

        h_t = exp(delta_t * A) * h_{t-1} + (delta_t * u_t) B_t     (h: (b, D, N), h_0 = 0)
        y_t = h_t @ C_t

    Returns y with shape (b, T, D). Cost is linear in T.
    """
    b, T, D = u.shape
    N = A.shape[1]
    if delta.shape != u.shape or A.shape != (D, N) or B.shape != (b, T, N) or C.shape != (b, T, N):
        raise ValueError(
            f"selective_scan shapes disagree: u{u.shape} delta{delta.shape} A{A.shape} "
            f"B{B.shape} C{C.shape}"
        )
    dt = u.data.dtype
    du = delta.data * u.data

    def blocks():
        # fixed-size time blocks keep the (b, t, D, N) temporaries cache-sized
        for s in range(0, T, _SCAN_BLOCK):
            e = min(s + _SCAN_BLOCK, T)
            dA = np.exp(delta.data[:, s:e, :, None] * A.data)
            yield s, e, dA

    h = np.empty((b, T, D, N), dt)
    y = np.empty((b, T, D), dt)
    state = np.zeros((b, D, N), dt)
    for s, e, dA in blocks():
        dBu = du[:, s:e, :, None] * B.data[:, s:e, None, :]
        for t in range(e - s):
            state = dA[:, t] * state + dBu[:, t]
            h[:, s + t] = state
        y[:, s:e] = (h[:, s:e] @ C.data[:, s:e, :, None])[..., 0]

    def back(gy):
        gC = (gy[:, :, None, :] @ h)[:, :, 0, :]
        gdelta = np.empty((b, T, D), dt)
        g_du = np.empty((b, T, D), dt)
        gA = np.zeros((D, N), dt)
        gB = np.empty((b, T, N), dt)
        acc = np.zeros((b, D, N), dt)
        for s, e, dA in reversed(list(blocks())):
            n = e - s
            gdA = np.empty((b, n, D, N), dt)
            gdBu = np.empty((b, n, D, N), dt)
            for t in range(n - 1, -1, -1):
                acc = acc + gy[:, s + t, :, None] * C.data[:, s + t, None, :]
                gdBu[:, t] = acc
                gdA[:, t] = acc * h[:, s + t - 1] if s + t > 0 else 0.0
                acc = acc * dA[:, t]
            tmp = gdA * dA
            gdelta[:, s:e] = (tmp * A.data).sum(-1)
            gA += (tmp * delta.data[:, s:e, :, None]).sum(axis=(0, 1))
            g_du[:, s:e] = (gdBu @ B.data[:, s:e, :, None])[..., 0]
            gB[:, s:e] = (gdBu * du[:, s:e, :, None]).sum(axis=2)
        gdelta += g_du * u.data
        gu = g_du * delta.data
        return gu, gdelta, gA, gB, gC

    return _make(y, (u, delta, A, B, C), back, "selective_scan")


# ----------------------------------------------------------------- losses


def cross_entropy(logits: Tensor, targets, weights: np.ndarray | None = None) -> Tensor:
    """Mean (optionally class-weighted) negative log-likelihood of (n, K) logits.

    With weights the mean is ``sum_i w[y_i] * nll_i / sum_i w[y_i]``.
    """
    y = np.asarray(targets, dtype=np.int64)
    n, K = logits.shape
    if y.shape != (n,):
        raise ValueError(f"targets must have shape ({n},), got {y.shape}")
    if y.size and (y.min() < 0 or y.max() >= K):
        raise ValueError(f"targets must lie in [0, {K})")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    w = np.ones(n, logits.data.dtype) if weights is None else np.asarray(weights, logits.data.dtype)[y]
    total = w.sum()
    rows = np.arange(n)
    loss = -(w * logp[rows, y]).sum() / total

    def back(g):
        p = np.exp(logp)
        p[rows, y] -= 1.0
        return (g * p * (w / total)[:, None],)

    return _make(np.asarray(loss), (logits,), back, "cross_entropy")


# --------------------------------------------------------- grad checking


def numerical_grad(f: Callable[[], Tensor], x: Tensor, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of scalar ``f()`` with respect to ``x.data``."""
    g = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    gflat = g.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = f().item()
            flat[i] = orig - h
            fm = f().item()
            flat[i] = orig
            gflat[i] = (fp - fm) / (2.0 * h)
    return g


def grad_rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """``||a - n|| / max(||a||, ||n||)`` over one tensor (0 when both vanish)."""
    denom = max(np.linalg.norm(analytic), np.linalg.norm(numeric))
    if denom == 0.0:
        return 0.0
    return float(np.linalg.norm(analytic - numeric) / denom)


def check_gradients(f: Callable[[], Tensor], params: Iterable[Tensor], h: float = 1e-5) -> dict:
    """Compare backprop against central differences for each tensor in ``params``.

    Returns ``{index: relative error}``.
    """
    params = list(params)
    for p in params:
        p.grad = None
    f().backward()
    out = {}
    for i, p in enumerate(params):
        analytic = np.zeros_like(p.data) if p.grad is None else p.grad.copy()
        out[i] = grad_rel_error(analytic, numerical_grad(f, p, h))
    return out


# ------------------------------------------------------------ checkpoints

_CKPT_MAGIC = b"MFCK"
_CKPT_PREFIX = struct.Struct("<4sIQ")


def save_checkpoint(path, arrays: dict[str, np.ndarray], meta: dict | None = None) -> None:
    """Write named float64 arrays: prefix, JSON index, then raw little-endian payloads."""
    index = []
    offset = 0
    blobs = []
    for name, arr in arrays.items():
        a = np.ascontiguousarray(arr, dtype="<f8")
        index.append({"name": name, "shape": list(a.shape), "offset": offset})
        blobs.append(a.tobytes())
        offset += a.nbytes
    header = json.dumps({"tensors": index, "meta": meta or {}}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_CKPT_PREFIX.pack(_CKPT_MAGIC, 1, len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    raw = Path(path).read_bytes()
    if len(raw) < _CKPT_PREFIX.size:
        raise ValueError(f"{path}: too short to be a checkpoint")
    magic, version, hlen = _CKPT_PREFIX.unpack_from(raw, 0)
    if magic != _CKPT_MAGIC or version != 1:
        raise ValueError(f"{path}: not a version-1 checkpoint (magic {magic!r})")
    start = _CKPT_PREFIX.size + hlen
    header = json.loads(raw[_CKPT_PREFIX.size:start])
    arrays = {}
    for entry in header["tensors"]:
        count = int(np.prod(entry["shape"], dtype=np.int64))
        off = start + entry["offset"]
        if off + 8 * count > len(raw):
            raise ValueError(f"{path}: payload for {entry['name']!r} is truncated")
        arrays[entry["name"]] = np.frombuffer(raw, "<f8", count, off).reshape(entry["shape"]).copy()
    return arrays, header["meta"]
