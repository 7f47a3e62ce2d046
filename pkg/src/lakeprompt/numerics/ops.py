"""Differentiable ops. Each forward records the exact vector-Jacobian product."""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ContractError
from .tensor import Tensor, accumulate, as_tensor, make

SQRT_2_OVER_PI = float(np.sqrt(2.0 / np.pi))
GELU_C = 0.044715


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _pair(a, b):
    return as_tensor(a), as_tensor(b, dtype=as_tensor(a).dtype)


def _check_broadcast(a, b, op):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ContractError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast(a, b, "add")

    def back(g):
        accumulate(a, _unbroadcast(g, a.shape))
        accumulate(b, _unbroadcast(g, b.shape))
    return make(a.data + b.data, (a, b), back, "add")


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast(a, b, "sub")

    def back(g):
        accumulate(a, _unbroadcast(g, a.shape))
        accumulate(b, _unbroadcast(-g, b.shape))
    return make(a.data - b.data, (a, b), back, "sub")


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast(a, b, "mul")

    def back(g):
        if a.requires_grad:
            accumulate(a, _unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            accumulate(b, _unbroadcast(g * a.data, b.shape))
    return make(a.data * b.data, (a, b), back, "mul")


def scale(a, s: float) -> Tensor:
    a = as_tensor(a)
    s = float(s)
    return make(a.data * s, (a,), lambda g: accumulate(a, g * s), "scale")


def matmul(a, b) -> Tensor:
    """Batched matrix product with numpy broadcasting over leading dims."""
    a, b = _pair(a, b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ContractError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    def back(g):
        if a.requires_grad:
            accumulate(a, _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
        if b.requires_grad:
            accumulate(b, _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape))
    return make(a.data @ b.data, (a, b), back, "matmul")


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ContractError(f"reshape: cannot view {a.shape} as {tuple(shape)}") from None
    return make(out, (a,), lambda g: accumulate(a, g.reshape(a.shape)), "reshape")


def transpose(a, axes=()) -> Tensor:
    a = as_tensor(a)
    axes = tuple(axes) if axes else tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))
    return make(a.data.transpose(axes), (a,), lambda g: accumulate(a, g.transpose(inv)), "transpose")


def concat(tensors, axis=0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError:
        raise ContractError(f"concat: incompatible shapes {[t.shape for t in ts]} on axis {axis}") from None
    bounds = np.cumsum([0] + [t.shape[axis] for t in ts])

    def back(g):
        for t, lo, hi in zip(ts, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                accumulate(t, g[tuple(idx)])
    return make(out, ts, back, "concat")


def getitem(a, idx) -> Tensor:
    a = as_tensor(a)

    def back(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        accumulate(a, full)
    return make(a.data[idx], (a,), back, "getitem")


def broadcast_to(a, shape) -> Tensor:
    a = as_tensor(a)
    out = np.broadcast_to(a.data, shape).copy()
    return make(out, (a,), lambda g: accumulate(a, _unbroadcast(g, a.shape)), "broadcast_to")


def sum(a, axis=None, keepdims=False) -> Tensor:  # noqa: A001
    a = as_tensor(a)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        accumulate(a, np.broadcast_to(g, a.shape).copy())
    return make(np.asarray(a.data.sum(axis=axis, keepdims=keepdims)), (a,), back, "sum")


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return scale(sum(a, axis, keepdims), 1.0 / n)


def softmax(a, axis=-1) -> Tensor:
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        accumulate(a, y * (g - (g * y).sum(axis=axis, keepdims=True)))
    return make(y, (a,), back, "softmax")


def gelu(a) -> Tensor:
    """Tanh-approximation GELU."""
    a = as_tensor(a)
    x = a.data
    u = SQRT_2_OVER_PI * (x + GELU_C * (x * x * x))
    t = np.tanh(u)
    y = 0.5 * x * (1.0 + t)

    def back(g):
        du = SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_C * x * x)
        accumulate(a, g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du))
    return make(y, (a,), back, "gelu")


def layer_norm(a, gain, bias, eps=1e-5) -> Tensor:
    """Normalize over the last axis, then apply per-feature gain and bias."""
    a, gain, bias = as_tensor(a), as_tensor(gain), as_tensor(bias)
    n = a.shape[-1]
    if gain.shape != (n,) or bias.shape != (n,):
        raise ContractError(f"layer_norm: gain/bias {gain.shape}/{bias.shape} vs features {n}")
    mu = a.data.mean(axis=-1, keepdims=True)
    xc = a.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    y = xhat * gain.data + bias.data

    def back(g):
        lead = tuple(range(g.ndim - 1))
        if gain.requires_grad:
            accumulate(gain, (g * xhat).sum(axis=lead))
        if bias.requires_grad:
            accumulate(bias, g.sum(axis=lead))
        if a.requires_grad:
            dxh = g * gain.data
            dx = inv * (dxh - dxh.mean(axis=-1, keepdims=True)
                        - xhat * (dxh * xhat).mean(axis=-1, keepdims=True))
            accumulate(a, dx)
    return make(y, (a, gain, bias), back, "layer_norm")


def linear(x, weight, bias=None) -> Tensor:
    """``x @ weight + bias`` with ``weight`` shaped (in, out)."""
    y = matmul(x, weight)
    return y if bias is None else add(y, bias)


# --- convolution ------------------------------------------------------------

def _windows(xp, k, stride, ho, wo):
    v = sliding_window_view(xp, (k, k), axis=(2, 3))
    return v[:, :, : (ho - 1) * stride + 1 : stride, : (wo - 1) * stride + 1 : stride]


def conv2d(x, weight, bias=None, stride=1, padding=0, depthwise=False) -> Tensor:
    """2-D cross-correlation over NCHW input.

    ``weight`` is (Cout, Cin, k, k), or (C, 1, k, k) with ``depthwise=True``.
    Zero padding on all sides.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    bias = None if bias is None else as_tensor(bias)
    if x.ndim != 4 or weight.ndim != 4 or weight.shape[2] != weight.shape[3]:
        raise ContractError(f"conv2d: bad shapes x={x.shape} weight={weight.shape}")
    b, c, h, w = x.shape
    co, ci, k, _ = weight.shape
    if depthwise:
        if ci != 1 or co != c:
            raise ContractError(f"depthwise conv2d: weight {weight.shape} vs {c} channels")
    elif ci != c:
        raise ContractError(f"conv2d: weight expects {ci} input channels, got {c}")
    hp, wp = h + 2 * padding, w + 2 * padding
    if hp < k or wp < k:
        raise ContractError(f"conv2d: kernel {k} larger than padded input {(hp, wp)}")
    ho, wo = (hp - k) // stride + 1, (wp - k) // stride + 1
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    cols = _windows(xp, k, stride, ho, wo)  # (B, C, Ho, Wo, k, k) view
    wd = weight.data
    if depthwise:
        out = np.einsum("bchwij,cij->bchw", cols, wd[:, 0], optimize=True)
    else:
        # im2col as one contiguous (B*Ho*Wo, C*k*k) matrix
        cmat = np.ascontiguousarray(cols.transpose(0, 2, 3, 1, 4, 5)).reshape(b * ho * wo, c * k * k)
        wmat = wd.reshape(co, c * k * k)
        out = (cmat @ wmat.T).reshape(b, ho, wo, co).transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias.data.reshape(1, -1, 1, 1)
    out = np.ascontiguousarray(out)

    def back(g):
        if bias is not None and bias.requires_grad:
            accumulate(bias, g.sum(axis=(0, 2, 3)))
        if not depthwise:
            g2 = g.transpose(0, 2, 3, 1).reshape(b * ho * wo, co)
        if weight.requires_grad:
            if depthwise:
                dw = np.einsum("bchw,bchwij->cij", g, cols, optimize=True)[:, None]
            else:
                dw = (g2.T @ cmat).reshape(wd.shape)
            accumulate(weight, dw)
        if x.requires_grad:
            dxp = np.zeros(xp.shape, dtype=g.dtype)
            if not depthwise:
                dcols = (g2 @ wmat).reshape(b, ho, wo, c, k, k).transpose(0, 3, 1, 2, 4, 5)
            for i in range(k):
                for j in range(k):
                    if depthwise:
                        contrib = g * wd[:, 0, i, j].reshape(1, -1, 1, 1)
                    else:
                        contrib = dcols[..., i, j]
                    dxp[:, :, i : i + stride * (ho - 1) + 1 : stride,
                        j : j + stride * (wo - 1) + 1 : stride] += contrib
            if padding:
                dxp = dxp[:, :, padding:-padding, padding:-padding]
            accumulate(x, dxp)
    parents = (x, weight) if bias is None else (x, weight, bias)
    return make(out, parents, back, "conv2d")


def depthwise_separable_conv(x, dw_weight, pw_weight, pw_bias=None, stride=1, dw_bias=None) -> Tensor:
    """Per-channel k x k conv (zero padding k//2) followed by 1 x 1 channel mixing."""
    x = as_tensor(x)
    k = as_tensor(dw_weight).shape[-1]
    if stride > 1 and (x.shape[2] % stride or x.shape[3] % stride):
        raise ContractError(f"stride {stride} needs spatial dims divisible by it, got {x.shape[2:]}")
    y = conv2d(x, dw_weight, dw_bias, stride=stride, padding=k // 2, depthwise=True)
    return conv2d(y, pw_weight, pw_bias)


# --- resampling -------------------------------------------------------------

def bilinear_matrix(n: int, factor: int, dtype=np.float64) -> np.ndarray:
    """(factor*n, n) interpolation matrix, half-pixel centres (align_corners=False)."""
    m = np.zeros((factor * n, n), dtype=dtype)
    for o in range(factor * n):
        src = max((o + 0.5) / factor - 0.5, 0.0)
        i0 = min(int(np.floor(src)), n - 1)
        i1 = min(i0 + 1, n - 1)
        lam = src - i0
        m[o, i0] += 1.0 - lam
        m[o, i1] += lam
    return m


def bilinear_upsample(x, factor: int) -> Tensor:
    x = as_tensor(x)
    if x.ndim != 4:
        raise ContractError(f"bilinear_upsample expects NCHW, got {x.shape}")
    uh = bilinear_matrix(x.shape[2], factor, x.dtype)
    uw = bilinear_matrix(x.shape[3], factor, x.dtype)
    out = uh @ (x.data @ uw.T)

    def back(g):
        accumulate(x, (uh.T @ g) @ uw)
    return make(out, (x,), back, "bilinear_upsample")


# --- losses -----------------------------------------------------------------

def cross_entropy(logits, target) -> Tensor:
    """Mean pixel cross-entropy; ``logits`` (B, K, H, W), ``target`` int (B, H, W)."""
    logits = as_tensor(logits)
    t = np.asarray(target, dtype=np.int64)
    if logits.ndim != 4 or t.shape != (logits.shape[0],) + logits.shape[2:]:
        raise ContractError(f"cross_entropy: logits {logits.shape} vs target {t.shape}")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - lse
    picked = np.take_along_axis(logp, t[:, None], axis=1)
    n = t.size
    loss = np.asarray(-picked.sum() / n, dtype=logits.dtype)

    def back(g):
        p = np.exp(logp)
        np.put_along_axis(p, t[:, None], np.take_along_axis(p, t[:, None], axis=1) - 1.0, axis=1)
        accumulate(logits, p * (g / n))
    return make(loss, (logits,), back, "cross_entropy")
