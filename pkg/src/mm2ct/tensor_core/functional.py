"""Differentiable ops on :class:`Tensor`.

Each op computes its forward result with numpy and registers a closure that
maps the output gradient to input gradients.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Tensor, as_tensor, default_dtype, make_result


# When a list, every piecewise-linear op appends the side of its kink each
# element sits on; grad_check uses this to spot probes that straddle a kink.
_KINK_LOG: list | None = None


def _note_kink(side: np.ndarray):
    if _KINK_LOG is not None:
        _KINK_LOG.append(np.array(side, copy=True))


def _lift(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=default_dtype()))


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (reverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    nlead = g.ndim - len(shape)
    if nlead:
        g = g.sum(axis=tuple(range(nlead)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------- arithmetic
def add(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    sa, sb = a.shape, b.shape
    return make_result(a.data + b.data, (a, b),
                       lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    sa, sb = a.shape, b.shape
    return make_result(a.data - b.data, (a, b),
                       lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    ad, bd = a.data, b.data

    def bwd(g):
        ga = _unbroadcast(g * bd, ad.shape) if a.requires_grad else None
        gb = _unbroadcast(g * ad, bd.shape) if b.requires_grad else None
        return ga, gb

    return make_result(ad * bd, (a, b), bwd)


def div(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    ad, bd = a.data, b.data
    out = ad / bd

    def bwd(g):
        ga = _unbroadcast(g / bd, ad.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / bd, bd.shape) if b.requires_grad else None
        return ga, gb

    return make_result(out, (a, b), bwd)


def neg(a) -> Tensor:
    a = _lift(a)
    return make_result(-a.data, (a,), lambda g: (-g,))


def power(a, p: float) -> Tensor:
    a = _lift(a)
    ad = a.data
    return make_result(ad ** p, (a,), lambda g: (g * p * ad ** (p - 1),))


def maximum(a, b) -> Tensor:
    """Elementwise max; ties send the gradient to ``a``."""
    a, b = _lift(a), _lift(b)
    mask = a.data >= b.data
    _note_kink(mask)
    return make_result(np.where(mask, a.data, b.data), (a, b),
                       lambda g: (_unbroadcast(g * mask, a.shape),
                                  _unbroadcast(g * ~mask, b.shape)))


# ---------------------------------------------------------------- elementwise
def exp(a) -> Tensor:
    a = _lift(a)
    out = np.exp(a.data)
    return make_result(out, (a,), lambda g: (g * out,))


def expm1(a) -> Tensor:
    a = _lift(a)
    out = np.expm1(a.data)
    return make_result(out, (a,), lambda g: (g * (out + 1.0),))


def log(a) -> Tensor:
    a = _lift(a)
    ad = a.data
    return make_result(np.log(ad), (a,), lambda g: (g / ad,))


def sqrt(a) -> Tensor:
    a = _lift(a)
    out = np.sqrt(a.data)
    return make_result(out, (a,), lambda g: (g * 0.5 / out,))


def abs(a) -> Tensor:  # noqa: A001
    a = _lift(a)
    sgn = np.sign(a.data)
    _note_kink(sgn)
    return make_result(np.abs(a.data), (a,), lambda g: (g * sgn,))


def _sigmoid_np(x: np.ndarray) -> np.ndarray:
    # split by sign to avoid exp overflow
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a) -> Tensor:
    a = _lift(a)
    s = _sigmoid_np(a.data)
    return make_result(s, (a,), lambda g: (g * s * (1.0 - s),))


def tanh(a) -> Tensor:
    a = _lift(a)
    t = np.tanh(a.data)
    return make_result(t, (a,), lambda g: (g * (1.0 - t * t),))


def silu(a) -> Tensor:
    a = _lift(a)
    x = a.data
    s = _sigmoid_np(x)
    return make_result(x * s, (a,), lambda g: (g * (s * (1.0 + x * (1.0 - s))),))


def softplus(a) -> Tensor:
    a = _lift(a)
    x = a.data
    out = np.logaddexp(0.0, x).astype(x.dtype)
    return make_result(out, (a,), lambda g: (g * _sigmoid_np(x),))


def relu(a) -> Tensor:
    a = _lift(a)
    mask = a.data > 0
    _note_kink(mask)
    return make_result(a.data * mask, (a,), lambda g: (g * mask,))


def leaky_relu(a, slope: float = 0.2) -> Tensor:
    a = _lift(a)
    x = a.data
    factor = np.where(x > 0, 1.0, slope).astype(x.dtype)
    _note_kink(factor)
    return make_result(x * factor, (a,), lambda g: (g * factor,))


def softmax(a, axis: int = -1) -> Tensor:
    a = _lift(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return make_result(s, (a,), bwd)


# ---------------------------------------------------------------- reductions
def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = _lift(a)
    shape = a.shape
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return make_result(np.asarray(out), (a,), bwd)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _lift(a)
    if axis is None:
        n = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        n = int(np.prod([a.shape[i] for i in axes]))
    return mul(sum(a, axis, keepdims), 1.0 / n)


def var(a, axis=-1, keepdims: bool = True) -> Tensor:
    """Biased (population) variance."""
    mu = mean(a, axis, keepdims=True)
    d = a - mu
    return mean(d * d, axis, keepdims=keepdims)


# ---------------------------------------------------------------- shape ops
def reshape(a, shape) -> Tensor:
    a = _lift(a)
    old = a.shape
    return make_result(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a, axes=None) -> Tensor:
    a = _lift(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))
    return make_result(np.ascontiguousarray(a.data.transpose(axes)), (a,),
                       lambda g: (g.transpose(inv),))


def getitem(a, idx) -> Tensor:
    a = _lift(a)
    shape = a.shape

    def bwd(g):
        full = np.zeros(shape, dtype=g.dtype)
        if _is_advanced(idx):
            np.add.at(full, idx, g)
        else:
            full[idx] += g
        return (full,)

    return make_result(np.array(a.data[idx]), (a,), bwd)


def _is_advanced(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def concat(tensors, axis: int = 0) -> Tensor:
    ts = [_lift(t) for t in tensors]
    sizes = [t.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.split(g, splits, axis=axis))

    return make_result(np.concatenate([t.data for t in ts], axis=axis), ts, bwd)


def stack(tensors, axis: int = 0) -> Tensor:
    ts = [_lift(t) for t in tensors]
    expanded = [reshape(t, t.shape[:axis % (t.ndim + 1)] + (1,) + t.shape[axis % (t.ndim + 1):])
                for t in ts]
    return concat(expanded, axis=axis)


def flip(a, axis: int) -> Tensor:
    a = _lift(a)
    return make_result(np.ascontiguousarray(np.flip(a.data, axis)), (a,),
                       lambda g: (np.flip(g, axis),))


def pad(a, widths) -> Tensor:
    """Zero padding; ``widths`` as for :func:`numpy.pad`."""
    a = _lift(a)
    sl = tuple(slice(lo, lo + n) for (lo, _), n in zip(widths, a.shape))
    return make_result(np.pad(a.data, widths), (a,), lambda g: (g[sl],))


def upsample_nearest(a, factor: int = 2) -> Tensor:
    """Nearest-neighbour upsampling of the last two axes."""
    a = _lift(a)
    out = a.data.repeat(factor, axis=-2).repeat(factor, axis=-1)

    def bwd(g):
        *lead, h, w = g.shape
        g = g.reshape(*lead, h // factor, factor, w // factor, factor)
        return (g.sum(axis=(-3, -1)),)

    return make_result(out, (a,), bwd)


def avg_pool2(a) -> Tensor:
    """2x2 average pooling with stride 2 over the last two axes."""
    a = _lift(a)
    *lead, h, w = a.shape
    if h % 2 or w % 2:
        raise ValueError(f"avg_pool2 needs even extents, got {(h, w)}")
    out = a.data.reshape(*lead, h // 2, 2, w // 2, 2).mean(axis=(-3, -1))

    def bwd(g):
        return (np.repeat(np.repeat(g, 2, axis=-2), 2, axis=-1) * 0.25,)

    return make_result(out, (a,), bwd)


# ---------------------------------------------------------------- linear algebra
def matmul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    ad, bd = a.data, b.data

    def bwd(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape) if bd.ndim > 1 else np.outer(g, bd)
        if b.requires_grad:
            if ad.ndim == 1:
                gb = np.outer(ad, g)
            else:
                gb = _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape)
        return ga, gb

    return make_result(ad @ bd, (a, b), bwd)


def linear(x, w, b=None) -> Tensor:
    """Affine map over the last axis: ``x @ w.T + b`` with ``w`` shaped (out, in)."""
    x, w = _lift(x), _lift(w)
    if x.shape[-1] != w.shape[1]:
        raise ValueError(f"linear: input extent {x.shape[-1]} != weight in-features {w.shape[1]}")
    xd, wd = x.data, w.data
    lead = xd.shape[:-1]
    x2 = xd.reshape(-1, xd.shape[-1])
    out = x2 @ wd.T
    inputs = [x, w]
    if b is not None:
        b = _lift(b)
        if b.shape != (wd.shape[0],):
            raise ValueError(f"linear: bias shape {b.shape} != ({wd.shape[0]},)")
        out = out + b.data
        inputs.append(b)

    def bwd(g):
        g2 = g.reshape(-1, g.shape[-1])
        gx = (g2 @ wd).reshape(xd.shape) if x.requires_grad else None
        gw = g2.T @ x2 if w.requires_grad else None
        if b is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    return make_result(out.reshape(*lead, wd.shape[0]), inputs, bwd)


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Normalise the last axis to zero mean / unit variance, then scale and shift."""
    if eps <= 0:
        raise ValueError("layer_norm eps must be positive")
    x, gamma, beta = _lift(x), _lift(gamma), _lift(beta)
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    gd = gamma.data

    def bwd(g):
        gx = None
        if x.requires_grad:
            gh = g * gd
            gx = inv * (gh - gh.mean(axis=-1, keepdims=True)
                        - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        ggamma = _unbroadcast(g * xhat, gd.shape)
        gbeta = _unbroadcast(g, beta.shape)
        return gx, ggamma, gbeta

    return make_result(xhat * gd + beta.data, (x, gamma, beta), bwd)


def instance_norm(x, eps: float = 1e-5) -> Tensor:
    """Per-sample, per-channel normalisation over (H, W) of a [B,C,H,W] map."""
    x = _lift(x)
    xd = x.data
    mu = xd.mean(axis=(-2, -1), keepdims=True)
    xc = xd - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=(-2, -1), keepdims=True) + eps)
    xhat = xc * inv

    def bwd(g):
        return (inv * (g - g.mean(axis=(-2, -1), keepdims=True)
                       - xhat * (g * xhat).mean(axis=(-2, -1), keepdims=True)),)

    return make_result(xhat, (x,), bwd)


# ---------------------------------------------------------------- convolution
def conv2d(x, w, b=None, stride: int = 1, pad: int = 0) -> Tensor:
    """2-D cross-correlation of x[B,C,H,W] with w[O,C,k,k]."""
    x, w = _lift(x), _lift(w)
    if x.ndim != 4 or w.ndim != 4:
        raise ValueError(f"conv2d expects 4-d input and weight, got {x.shape}, {w.shape}")
    B, C, H, W = x.shape
    O, Cw, kh, kw = w.shape
    if C != Cw:
        raise ValueError(f"conv2d channel mismatch: input {C}, weight {Cw}")
    Ho = (H + 2 * pad - kh) // stride + 1
    Wo = (W + 2 * pad - kw) // stride + 1
    if Ho <= 0 or Wo <= 0:
        raise ValueError(f"conv2d output extent non-positive: {(Ho, Wo)}")
    xd, wd = x.data, w.data
    xp = np.pad(xd, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else xd
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :Ho, :Wo]
    # columns: [B*Ho*Wo, C*kh*kw]
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(B * Ho * Wo, C * kh * kw)
    wmat = wd.reshape(O, -1)
    out = cols @ wmat.T
    inputs = [x, w]
    if b is not None:
        b = _lift(b)
        out += b.data
        inputs.append(b)
    out = out.reshape(B, Ho, Wo, O).transpose(0, 3, 1, 2)

    def bwd(g):
        g2 = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(-1, O)
        gx = gw = None
        if w.requires_grad:
            gw = (g2.T @ cols).reshape(wd.shape)
        if x.requires_grad:
            dcols = (g2 @ wmat).reshape(B, Ho, Wo, C, kh, kw)
            gxp = np.zeros(xp.shape, dtype=g.dtype)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i:i + stride * Ho:stride, j:j + stride * Wo:stride] += \
                        dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            gx = gxp[:, :, pad:pad + H, pad:pad + W] if pad else gxp
        if b is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    return make_result(np.ascontiguousarray(out), inputs, bwd)


def depthwise_conv1d_causal(x, w, b=None) -> Tensor:
    """Causal depthwise conv over the sequence axis of x[..., L, E] with w[E, k].

    ``y[t] = sum_j w[:, j] * x[t - (k-1) + j]`` with zeros before the start.
    """
    x, w = _lift(x), _lift(w)
    k = w.shape[1]
    L = x.shape[-2]
    xd = x.data
    lead_pad = [(0, 0)] * (xd.ndim - 2)
    xp = np.pad(xd, lead_pad + [(k - 1, 0), (0, 0)])
    wd = w.data
    out = np.zeros_like(xd)
    for j in range(k):
        out += xp[..., j:j + L, :] * wd[:, j]
    inputs = [x, w]
    if b is not None:
        b = _lift(b)
        out += b.data
        inputs.append(b)

    def bwd(g):
        gx = gw = None
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for j in range(k):
                gxp[..., j:j + L, :] += g * wd[:, j]
            gx = gxp[..., k - 1:, :]
        if w.requires_grad:
            gw = np.stack([(g * xp[..., j:j + L, :]).reshape(-1, wd.shape[0]).sum(axis=0)
                           for j in range(k)], axis=1)
        if b is None:
            return gx, gw
        return gx, gw, g.reshape(-1, wd.shape[0]).sum(axis=0)

    return make_result(out, inputs, bwd)


# ---------------------------------------------------------------- losses
def bce_with_logits(logits, target: float) -> Tensor:
    """Mean binary cross-entropy against a constant label, overflow-safe."""
    z = _lift(logits)
    x = z.data
    # log(1+exp(-|x|)) + max(x,0) - x*target
    loss = np.logaddexp(0.0, -np.abs(x)) + np.maximum(x, 0) - x * target
    n = x.size

    def bwd(g):
        return (g * (_sigmoid_np(x) - target) / n,)

    return make_result(np.asarray(loss.mean(), dtype=x.dtype), (z,), bwd)


def l1_loss(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    if a.shape != b.shape:
        raise ValueError(f"l1_loss shape mismatch {a.shape} vs {b.shape}")
    return mean(abs(a - b))


def mse_loss(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    if a.shape != b.shape:
        raise ValueError(f"mse_loss shape mismatch {a.shape} vs {b.shape}")
    d = a - b
    return mean(d * d)


__all__ = [name for name in dir() if not name.startswith("_")] + ["as_tensor"]
