"""Differentiable operations over N x C x H x W tensors.

Every op returns a new :class:`Tensor` whose backward closure maps the upstream
gradient to gradients of its inputs. Inputs keep their dtype, so double
precision in means double precision out.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .tensor import Tensor


def _t(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype if dtype is not None else np.float64))


def _check_4d(x: Tensor, name: str) -> None:
    if x.data.ndim != 4:
        raise ValueError(f"{name} expects an N x C x H x W tensor, got shape {x.shape}")


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a = _t(a)
    if not isinstance(b, Tensor):
        b_val = float(b)
        return Tensor(a.data + b_val, parents=(a,), backward_fn=lambda g: (g,))
    if a.shape != b.shape:
        raise ValueError(f"add: shape mismatch {a.shape} vs {b.shape}")
    return Tensor(a.data + b.data, parents=(a, b), backward_fn=lambda g: (g, g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"mul: shape mismatch {a.shape} vs {b.shape}")
    return Tensor(
        a.data * b.data, parents=(a, b), backward_fn=lambda g: (g * b.data, g * a.data)
    )


def scale(a: Tensor, k: float) -> Tensor:
    return Tensor(a.data * a.data.dtype.type(k), parents=(a,), backward_fn=lambda g: (g * k,))


def sum_all(a: Tensor) -> Tensor:
    def back(g):
        return (np.broadcast_to(g, a.shape).astype(a.dtype, copy=True),)

    return Tensor(np.asarray(a.data.sum(), dtype=a.dtype), parents=(a,), backward_fn=back)


def mean_all(a: Tensor) -> Tensor:
    n = a.data.size

    def back(g):
        return (np.full(a.shape, g / n, dtype=a.dtype),)

    return Tensor(np.asarray(a.data.mean(), dtype=a.dtype), parents=(a,), backward_fn=back)


def reshape(a: Tensor, shape) -> Tensor:
    return Tensor(a.data.reshape(shape), parents=(a,), backward_fn=lambda g: (g.reshape(a.shape),))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return Tensor(np.where(mask, a.data, 0).astype(a.dtype), parents=(a,), backward_fn=lambda g: (g * mask,))


def sigmoid(a: Tensor) -> Tensor:
    out = _stable_sigmoid(a.data)
    return Tensor(out, parents=(a,), backward_fn=lambda g: (g * out * (1 - out),))


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    mask = (a.data > lo) & (a.data < hi)
    return Tensor(np.clip(a.data, lo, hi), parents=(a,), backward_fn=lambda g: (g * mask,))


def concat_channels(tensors: Sequence[Tensor]) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ValueError("concat_channels needs at least one tensor")
    for t in tensors:
        _check_4d(t, "concat_channels")
    n, _, h, w = tensors[0].shape
    for t in tensors[1:]:
        if (t.shape[0], t.shape[2], t.shape[3]) != (n, h, w):
            raise ValueError(f"concat_channels: incompatible shapes {[t.shape for t in tensors]}")
    sizes = [t.shape[1] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def back(g):
        return tuple(g[:, bounds[i] : bounds[i + 1]] for i in range(len(tensors)))

    return Tensor(np.concatenate([t.data for t in tensors], axis=1), parents=tensors, backward_fn=back)


# ---------------------------------------------------------------- convolution


def conv_output_size(size: int, k: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - k) // stride + 1


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation; ``weight`` is (O, C, k, k)."""
    _check_4d(x, "conv2d")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    n, c, h, w = x.shape
    o, c_w, kh, kw = weight.shape
    if c != c_w:
        raise ValueError(f"conv2d: input has {c} channels, weight expects {c_w}")
    ho = conv_output_size(h, kh, stride, padding)
    wo = conv_output_size(w, kw, stride, padding)
    if ho < 1 or wo < 1:
        raise ValueError("conv2d: kernel larger than padded input")
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    cols = np.empty((n, c, kh, kw, ho, wo), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride]
    cols2 = cols.reshape(n, c * kh * kw, ho * wo)
    w2 = weight.data.reshape(o, -1)
    out = np.matmul(w2, cols2).reshape(n, o, ho, wo)
    if bias is not None:
        out += bias.data.reshape(1, o, 1, 1)
    parents = (x, weight) if bias is None else (x, weight, bias)

    def back(g):
        g2 = g.reshape(n, o, ho * wo)
        gw = np.matmul(g2, cols2.transpose(0, 2, 1)).sum(0).reshape(weight.shape) if weight.requires_grad else None
        gx = None
        if x.requires_grad:
            gcols = np.matmul(w2.T, g2).reshape(n, c, kh, kw, ho, wo)
            gxp = np.zeros(xp.shape, dtype=x.dtype)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += gcols[:, :, i, j]
            gx = gxp[:, :, padding : padding + h, padding : padding + w] if padding else gxp
        grads = [gx, gw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return tuple(grads)

    return Tensor(out, parents=parents, backward_fn=back)


def deconv_output_size(size: int, k: int, stride: int, padding: int, output_padding: int = 0) -> int:
    return (size - 1) * stride + k - 2 * padding + output_padding


def deconv2d(
    x: Tensor,
    weight: Tensor,
    bias: Tensor | None = None,
    stride: int = 1,
    padding: int = 0,
    output_padding: int = 0,
) -> Tensor:
    """Transposed convolution; ``weight`` is (C_in, C_out, k, k)."""
    _check_4d(x, "deconv2d")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    n, c, h, w = x.shape
    c_w, o, kh, kw = weight.shape
    if c != c_w:
        raise ValueError(f"deconv2d: input has {c} channels, weight expects {c_w}")
    if not 0 <= output_padding < stride:
        raise ValueError("output_padding must lie in [0, stride)")
    ho = deconv_output_size(h, kh, stride, padding, output_padding)
    wo = deconv_output_size(w, kw, stride, padding, output_padding)
    full_h = (h - 1) * stride + kh + output_padding
    full_w = (w - 1) * stride + kw + output_padding
    x2 = x.data.reshape(n, c, h * w)
    w2 = weight.data.reshape(c, o * kh * kw)
    cols = np.matmul(w2.T, x2).reshape(n, o, kh, kw, h, w)
    full = np.zeros((n, o, full_h, full_w), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            full[:, :, i : i + stride * h : stride, j : j + stride * w : stride] += cols[:, :, i, j]
    out = full[:, :, padding : padding + ho, padding : padding + wo].copy()
    if bias is not None:
        out += bias.data.reshape(1, o, 1, 1)
    parents = (x, weight) if bias is None else (x, weight, bias)

    def back(g):
        gfull = np.zeros((n, o, full_h, full_w), dtype=g.dtype)
        gfull[:, :, padding : padding + ho, padding : padding + wo] = g
        gcols = np.empty((n, o, kh, kw, h, w), dtype=g.dtype)
        for i in range(kh):
            for j in range(kw):
                gcols[:, :, i, j] = gfull[:, :, i : i + stride * h : stride, j : j + stride * w : stride]
        gcols2 = gcols.reshape(n, o * kh * kw, h * w)
        gx = np.matmul(w2, gcols2).reshape(x.shape) if x.requires_grad else None
        gw = (
            np.matmul(x2, gcols2.transpose(0, 2, 1)).sum(0).reshape(weight.shape)
            if weight.requires_grad
            else None
        )
        grads = [gx, gw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return tuple(grads)

    return Tensor(out, parents=parents, backward_fn=back)


def maxpool2d(x: Tensor, k: int = 2, s: int | None = None) -> Tensor:
    """Max pooling without padding; gradient goes to the first maximal element."""
    _check_4d(x, "maxpool2d")
    s = k if s is None else s
    n, c, h, w = x.shape
    ho = (h - k) // s + 1
    wo = (w - k) // s + 1
    if ho < 1 or wo < 1:
        raise ValueError("maxpool2d: window larger than input")
    windows = np.empty((n, c, k * k, ho, wo), dtype=x.dtype)
    for i in range(k):
        for j in range(k):
            windows[:, :, i * k + j] = x.data[:, :, i : i + s * ho : s, j : j + s * wo : s]
    arg = windows.argmax(axis=2)
    out = np.take_along_axis(windows, arg[:, :, None], axis=2)[:, :, 0]

    def back(g):
        gx = np.zeros(x.shape, dtype=g.dtype)
        for i in range(k):
            for j in range(k):
                gx[:, :, i : i + s * ho : s, j : j + s * wo : s] += g * (arg == i * k + j)
        return (gx,)

    return Tensor(out, parents=(x,), backward_fn=back)


def resize_matrix(in_size: int, out_size: int) -> np.ndarray:
    """Linear interpolation weights (out, in), align-corners-false convention."""
    m = np.zeros((out_size, in_size))
    scale_ = in_size / out_size
    for d in range(out_size):
        src = max((d + 0.5) * scale_ - 0.5, 0.0)
        i0 = min(int(np.floor(src)), in_size - 1)
        i1 = min(i0 + 1, in_size - 1)
        lam = src - i0
        m[d, i0] += 1.0 - lam
        m[d, i1] += lam
    return m


def bilinear_resize(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Separable bilinear resampling with half-pixel centers (no antialiasing)."""
    _check_4d(x, "bilinear_resize")
    _, _, h, w = x.shape
    if (h, w) == (out_h, out_w):
        return x
    ah = resize_matrix(h, out_h).astype(x.dtype)
    aw = resize_matrix(w, out_w).astype(x.dtype)
    out = np.matmul(np.matmul(ah, x.data), aw.T)

    def back(g):
        return (np.matmul(np.matmul(ah.T, g), aw),)

    return Tensor(out, parents=(x,), backward_fn=back)


# ---------------------------------------------------------------- fused losses


def bce_with_logits(logits: Tensor, labels: np.ndarray, weights: np.ndarray) -> Tensor:
    """Sum of weighted binary cross-entropy terms, computed from logits."""
    z = logits.data
    q = np.asarray(labels, dtype=z.dtype)
    wts = np.asarray(weights, dtype=z.dtype)
    # log(1 + e^-|z|) + max(z, 0) - q z
    per = np.logaddexp(0.0, -np.abs(z)) + np.maximum(z, 0) - q * z
    total = np.asarray(np.sum(wts * per), dtype=z.dtype)
    p = _stable_sigmoid(z)

    def back(g):
        return (g * wts * (p - q),)

    return Tensor(total, parents=(logits,), backward_fn=back)


def binary_cross_entropy_terms(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=float)
    q = np.asarray(labels, dtype=float)
    return np.logaddexp(0.0, -np.abs(z)) + np.maximum(z, 0) - q * z


def smooth_l1_terms(residual: np.ndarray) -> np.ndarray:
    r = np.abs(residual)
    return np.where(r < 1.0, 0.5 * r * r, r - 0.5)


def smooth_l1(pred: Tensor, target: np.ndarray, weights: np.ndarray) -> Tensor:
    """Weighted smooth-L1 sum with the knee at 1."""
    r = pred.data - np.asarray(target, dtype=pred.dtype)
    wts = np.asarray(weights, dtype=pred.dtype)
    total = np.asarray(np.sum(wts * smooth_l1_terms(r)), dtype=pred.dtype)
    slope = np.where(np.abs(r) < 1.0, r, np.sign(r))

    def back(g):
        return (g * wts * slope,)

    return Tensor(total, parents=(pred,), backward_fn=back)
