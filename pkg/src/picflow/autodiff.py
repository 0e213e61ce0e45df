"""Minimal dense-tensor reverse-mode autodiff engine.

Implements exactly the operator set the surrogate network needs: conv2d
(cross-correlation), pixel shuffle/unshuffle, nearest upsampling, weight
normalization, sigmoid/tanh/add/hadamard/affine pointwise ops, smooth-L1,
plus Adam and Kaiming initialization. Everything is double precision and
define-by-run: each forward pass records a fresh graph, so rollout length
may differ between training and extrapolation.

Layout convention is NCHW with batch size 1 in practice; convolutions use
an im2col/matmul formulation with cached gather indices.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    pass


class Tensor:
    """Dense float64 array node in the computation record."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False,
                 _parents: tuple = (), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def _accum(self, g: np.ndarray):
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def backward(self):
        """Reverse-mode sweep seeding this (scalar) node with gradient 1."""
        if self.data.ndim != 0 and self.data.size != 1:
            raise ShapeError("backward requires a scalar root")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)


def zero_grads(params) -> None:
    for p in params:
        p.grad = None


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------------------
# convolution

_COL_IDX_CACHE: dict[tuple, tuple[np.ndarray, int, int]] = {}


def _col_indices(c: int, h: int, w: int, kh: int, kw: int,
                 stride: int, pad: int):
    """Gather indices mapping padded input to im2col columns."""
    key = (c, h, w, kh, kw, stride, pad)
    cached = _COL_IDX_CACHE.get(key)
    if cached is not None:
        return cached
    hp, wp = h + 2 * pad, w + 2 * pad
    oh = (hp - kh) // stride + 1
    ow = (wp - kw) // stride + 1
    ki = np.repeat(np.arange(kh), kw)
    kj = np.tile(np.arange(kw), kh)
    oi = stride * np.repeat(np.arange(oh), ow)
    oj = stride * np.tile(np.arange(ow), oh)
    spatial = (ki[:, None] + oi[None, :]) * wp + (kj[:, None] + oj[None, :])
    idx = (np.arange(c)[:, None, None] * (hp * wp)
           + spatial[None]).reshape(c * kh * kw, oh * ow)
    result = (idx, oh, ow)
    _COL_IDX_CACHE[key] = result
    return result


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    """2D cross-correlation of NCHW input with OIkk filters."""
    n, c, h, w = x.shape
    o, ci, kh, kw = weight.shape
    if ci != c:
        raise ShapeError(f"conv2d: input has {c} channels, weight expects {ci}")
    idx, oh, ow = _col_indices(c, h, w, kh, kw, stride, padding)
    if oh < 1 or ow < 1:
        raise ShapeError("conv2d: kernel/stride/padding leave no output pixels")
    if padding:
        xp = np.zeros((n, c, h + 2 * padding, w + 2 * padding))
        xp[:, :, padding:padding + h, padding:padding + w] = x.data
    else:
        xp = x.data
    cols = xp.reshape(n, -1)[:, idx]  # (n, c*kh*kw, oh*ow)
    w2 = weight.data.reshape(o, -1)
    out = np.matmul(w2, cols)  # (n, o, oh*ow)
    if bias is not None:
        out = out + bias.data.reshape(1, o, 1)
    out = out.reshape(n, o, oh, ow)

    parents = (x, weight) if bias is None else (x, weight, bias)
    result = Tensor(out, _parents=parents)

    def backward(g: np.ndarray):
        go = g.reshape(n, o, oh * ow)
        weight._accum(np.matmul(go, cols.transpose(0, 2, 1)).sum(axis=0)
                      .reshape(weight.shape))
        if bias is not None:
            bias._accum(go.sum(axis=(0, 2)))
        dcols = np.matmul(w2.T, go)  # (n, c*kh*kw, oh*ow)
        hp, wp = h + 2 * padding, w + 2 * padding
        flat_idx = idx.ravel()
        dxp = np.empty((n, c * hp * wp))
        for b in range(n):
            dxp[b] = np.bincount(flat_idx, weights=dcols[b].ravel(),
                                 minlength=c * hp * wp)
        dxp = dxp.reshape(n, c, hp, wp)
        if padding:
            dxp = dxp[:, :, padding:hp - padding, padding:wp - padding]
        x._accum(dxp)

    result._backward = backward
    return result


def conv2d_reference(x: np.ndarray, weight: np.ndarray, bias: np.ndarray,
                     stride: int = 1, padding: int = 0) -> np.ndarray:
    """Naive nested-loop cross-correlation; the oracle conv2d is tested against."""
    n, c, h, w = x.shape
    o, _, kh, kw = weight.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (w + 2 * padding - kw) // stride + 1
    out = np.zeros((n, o, oh, ow))
    for b in range(n):
        for f in range(o):
            for y in range(oh):
                for z in range(ow):
                    acc = 0.0
                    for ch in range(c):
                        for dy in range(kh):
                            for dz in range(kw):
                                acc += (xp[b, ch, y * stride + dy, z * stride + dz]
                                        * weight[f, ch, dy, dz])
                    out[b, f, y, z] = acc + bias[f]
    return out


# ---------------------------------------------------------------------------
# rearrangement and resampling

def pixel_unshuffle(x: Tensor, r: int) -> Tensor:
    """(N, C, H, W) -> (N, C*r*r, H/r, W/r), moving r x r blocks to channels."""
    n, c, h, w = x.shape
    if h % r or w % r:
        raise ShapeError(f"pixel_unshuffle: spatial dims {(h, w)} not divisible by {r}")
    out = (x.data.reshape(n, c, h // r, r, w // r, r)
           .transpose(0, 1, 3, 5, 2, 4)
           .reshape(n, c * r * r, h // r, w // r))
    result = Tensor(out, _parents=(x,))

    def backward(g: np.ndarray):
        x._accum(g.reshape(n, c, r, r, h // r, w // r)
                 .transpose(0, 1, 4, 2, 5, 3).reshape(n, c, h, w))

    result._backward = backward
    return result


def pixel_shuffle(x: Tensor, r: int) -> Tensor:
    """Inverse of :func:`pixel_unshuffle`."""
    n, c, h, w = x.shape
    if c % (r * r):
        raise ShapeError(f"pixel_shuffle: {c} channels not divisible by r^2 = {r * r}")
    co = c // (r * r)
    out = (x.data.reshape(n, co, r, r, h, w)
           .transpose(0, 1, 4, 2, 5, 3)
           .reshape(n, co, h * r, w * r))
    result = Tensor(out, _parents=(x,))

    def backward(g: np.ndarray):
        x._accum(g.reshape(n, co, h, r, w, r)
                 .transpose(0, 1, 3, 5, 2, 4).reshape(n, c, h, w))

    result._backward = backward
    return result


def upsample_nearest(x: Tensor, scale: int) -> Tensor:
    """Replicate each spatial element scale x scale."""
    if scale < 1:
        raise ShapeError("upsample scale must be >= 1")
    n, c, h, w = x.shape
    out = x.data.repeat(scale, axis=2).repeat(scale, axis=3)
    result = Tensor(out, _parents=(x,))

    def backward(g: np.ndarray):
        x._accum(g.reshape(n, c, h, scale, w, scale).sum(axis=(3, 5)))

    result._backward = backward
    return result


# ---------------------------------------------------------------------------
# weight normalization

def weight_norm(v: Tensor, g: Tensor) -> Tensor:
    """Reparameterize filters as w = g * v / ||v||, norm per output filter."""
    axes = tuple(range(1, v.data.ndim))
    norm = np.sqrt((v.data ** 2).sum(axis=axes, keepdims=True))
    if np.any(norm == 0):
        raise ShapeError("weight_norm: zero-norm filter is degenerate")
    g_col = g.data.reshape((-1,) + (1,) * (v.data.ndim - 1))
    vhat = v.data / norm
    result = Tensor(g_col * vhat, _parents=(v, g))

    def backward(grad: np.ndarray):
        dot = (grad * vhat).sum(axis=axes, keepdims=True)
        g._accum(dot.reshape(g.shape))
        v._accum((g_col / norm) * (grad - vhat * dot))

    result._backward = backward
    return result


# ---------------------------------------------------------------------------
# pointwise ops

def sigmoid(x: Tensor) -> Tensor:
    y = 1.0 / (1.0 + np.exp(-x.data))
    result = Tensor(y, _parents=(x,))
    result._backward = lambda g: x._accum(g * y * (1.0 - y))
    return result


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    result = Tensor(y, _parents=(x,))
    result._backward = lambda g: x._accum(g * (1.0 - y * y))
    return result


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"add: shape mismatch {a.shape} vs {b.shape}")
    result = Tensor(a.data + b.data, _parents=(a, b))

    def backward(g: np.ndarray):
        a._accum(g)
        b._accum(g)

    result._backward = backward
    return result


def hadamard(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"hadamard: shape mismatch {a.shape} vs {b.shape}")
    result = Tensor(a.data * b.data, _parents=(a, b))

    def backward(g: np.ndarray):
        a._accum(g * b.data)
        b._accum(g * a.data)

    result._backward = backward
    return result


def affine(x: Tensor, scale: float, shift: float = 0.0) -> Tensor:
    """scale * x + shift with scalar coefficients."""
    result = Tensor(scale * x.data + shift, _parents=(x,))
    result._backward = lambda g: x._accum(scale * g)
    return result


def concat0(tensors: list[Tensor]) -> Tensor:
    """Concatenate along axis 0 (used to fuse per-gate filter banks)."""
    result = Tensor(np.concatenate([t.data for t in tensors], axis=0),
                    _parents=tuple(tensors))
    offsets = np.cumsum([0] + [t.shape[0] for t in tensors])

    def backward(g: np.ndarray):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            t._accum(g[lo:hi])

    result._backward = backward
    return result


def channel_slice(x: Tensor, start: int, stop: int) -> Tensor:
    """Slice along the channel axis of an NCHW tensor."""
    result = Tensor(x.data[:, start:stop], _parents=(x,))

    def backward(g: np.ndarray):
        full = np.zeros(x.shape)
        full[:, start:stop] = g
        x._accum(full)

    result._backward = backward
    return result


def reshape(x: Tensor, shape: tuple) -> Tensor:
    result = Tensor(x.data.reshape(shape), _parents=(x,))
    result._backward = lambda g: x._accum(g.reshape(x.shape))
    return result


def tensor_sum(x: Tensor) -> Tensor:
    result = Tensor(x.data.sum(), _parents=(x,))
    result._backward = lambda g: x._accum(np.full(x.shape, g))
    return result


# ---------------------------------------------------------------------------
# loss

def smooth_l1(pred: Tensor, target, beta: float,
              reduction: str = "mean") -> Tensor:
    """Huber-style loss: 0.5*d^2/beta for |d| < beta, |d| - 0.5*beta otherwise."""
    if beta <= 0:
        raise ShapeError("smooth_l1: beta must be positive")
    target = _as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"smooth_l1: shape mismatch {pred.shape} vs {target.shape}")
    if reduction not in ("mean", "sum"):
        raise ShapeError(f"smooth_l1: unknown reduction {reduction!r}")
    d = pred.data - target.data
    quad = np.abs(d) < beta
    per_elem = np.where(quad, 0.5 * d * d / beta, np.abs(d) - 0.5 * beta)
    scale = 1.0 / d.size if reduction == "mean" else 1.0
    result = Tensor(per_elem.sum() * scale, _parents=(pred, target))

    def backward(g: np.ndarray):
        dd = np.where(quad, d / beta, np.sign(d)) * (g * scale)
        pred._accum(dd)
        if target.requires_grad or target._parents:
            target._accum(-dd)

    result._backward = backward
    return result


# ---------------------------------------------------------------------------
# initialization and optimizer

def kaiming_init(shape: tuple, fan_in: int, rng: np.random.Generator) -> np.ndarray:
    """Normal draw with std sqrt(2/fan_in) (fan-in mode, gain sqrt(2))."""
    if fan_in <= 0:
        raise ShapeError("kaiming_init: fan_in must be positive")
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)


class AdamState:
    """First/second moment buffers and step counter for a parameter set."""

    def __init__(self, params: dict[str, Tensor], beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = {name: np.zeros_like(p.data) for name, p in params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in params.items()}


def adam_step(params: dict[str, Tensor], state: AdamState, lr: float) -> None:
    """In-place bias-corrected Adam update; parameters with no grad are skipped."""
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for name, p in params.items():
        if p.grad is None:
            continue
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * p.grad
        v *= state.beta2
        v += (1.0 - state.beta2) * p.grad * p.grad
        p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
