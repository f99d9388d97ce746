"""Spatial kernels on NCHW tensors: convolution, padding and pooling."""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ShapeError
from .tensor import Tensor, _result, mean, reshape, tmax


def _pair(v) -> tuple[int, int]:
    if isinstance(v, (tuple, list)):
        return int(v[0]), int(v[1])
    return int(v), int(v)


def _out_extent(size: int, k: int, stride: int, pad: int, what: str) -> int:
    padded = size + 2 * pad
    if k > padded:
        raise ShapeError(f"{what}: window {k} larger than padded extent {padded}")
    return (padded - k) // stride + 1


def _wrap_index(n: int, pad: int) -> np.ndarray:
    return np.arange(-pad, n + pad) % n


def pad2d(x: Tensor, padding, mode: str = "zeros", value: float = 0.0) -> Tensor:
    """Pad the two trailing axes. ``mode`` is ``"zeros"`` (constant) or ``"circular"``."""
    ph, pw = _pair(padding)
    if ph == 0 and pw == 0:
        return x
    h, w = x.shape[-2:]
    if mode == "circular":
        rows, cols = _wrap_index(h, ph), _wrap_index(w, pw)
        out = x.data[..., rows[:, None], cols[None, :]]

        def backward(g):
            full = np.zeros_like(x.data)
            np.add.at(full, (Ellipsis, rows[:, None], cols[None, :]), g)
            return (full,)

        return _result(np.ascontiguousarray(out), (x,), backward, "pad_circular")
    if mode != "zeros":
        raise ValueError(f"unknown padding mode {mode!r}")
    widths = [(0, 0)] * (x.ndim - 2) + [(ph, ph), (pw, pw)]
    out = np.pad(x.data, widths, constant_values=value)

    def backward(g):
        return (np.ascontiguousarray(g[..., ph:ph + h, pw:pw + w]),)

    return _result(out, (x,), backward, "pad")


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride=1, padding=0,
           padding_mode: str = "zeros") -> Tensor:
    """2-D cross-correlation, NCHW input and OIHW weights (im2col via strided views)."""
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv2d expects 4-D input and weight, got {x.shape} and {weight.shape}")
    n, c, h, w = x.shape
    o, wc, kh, kw = weight.shape
    if c != wc:
        raise ShapeError(f"conv2d: input has {c} channels, weight expects {wc}")
    if bias is not None and bias.shape != (o,):
        raise ShapeError(f"conv2d: bias shape {bias.shape} != ({o},)")
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    if sh < 1 or sw < 1:
        raise ShapeError("conv2d stride must be >= 1")
    ho = _out_extent(h, kh, sh, ph, "conv2d")
    wo = _out_extent(w, kw, sw, pw, "conv2d")

    if padding_mode == "circular":
        x = pad2d(x, (ph, pw), mode="circular")
        ph = pw = 0
    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if (ph or pw) else x.data
    windows = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw]
    # windows: (N, C, Ho, Wo, kh, kw)
    out = np.tensordot(windows, weight.data, axes=([1, 4, 5], [1, 2, 3]))  # (N, Ho, Wo, O)
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))
    if bias is not None:
        out += bias.data.reshape(1, o, 1, 1)

    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        gx = None
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    contrib = np.tensordot(g, weight.data[:, :, i, j], axes=([1], [0]))  # N,Ho,Wo,C
                    gxp[:, :, i:i + sh * ho:sh, j:j + sw * wo:sw] += contrib.transpose(0, 3, 1, 2)
            gx = gxp[:, :, ph:ph + x.shape[2], pw:pw + x.shape[3]]
            gx = np.ascontiguousarray(gx)
        gw = np.tensordot(g, windows, axes=([0, 2, 3], [0, 2, 3])) if weight.requires_grad else None
        grads = [gx, gw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return tuple(grads)

    return _result(out, parents, backward, "conv2d")


def maxpool2d(x: Tensor, kernel_size, stride=None, padding=0) -> Tensor:
    """Max pooling with -inf padding; backward routes to the first row-major argmax."""
    if x.ndim != 4:
        raise ShapeError(f"maxpool2d expects NCHW input, got {x.shape}")
    kh, kw = _pair(kernel_size)
    sh, sw = _pair(stride if stride is not None else kernel_size)
    ph, pw = _pair(padding)
    n, c, h, w = x.shape
    ho = _out_extent(h, kh, sh, ph, "maxpool2d")
    wo = _out_extent(w, kw, sw, pw, "maxpool2d")
    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw)), constant_values=-np.inf) \
        if (ph or pw) else x.data
    windows = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw]
    flat = windows.reshape(n, c, ho, wo, kh * kw)
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

    def backward(g):
        gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                hit = arg == i * kw + j
                if hit.any():
                    gxp[:, :, i:i + sh * ho:sh, j:j + sw * wo:sw] += np.where(hit, g, 0.0)
        return (np.ascontiguousarray(gxp[:, :, ph:ph + h, pw:pw + w]),)

    return _result(np.ascontiguousarray(out), (x,), backward, "maxpool2d")


def global_avg_pool(x: Tensor) -> Tensor:
    return mean(x, axis=(2, 3), keepdims=True)


def global_max_pool(x: Tensor) -> Tensor:
    n, c, h, w = x.shape
    return reshape(tmax(reshape(x, (n, c, h * w)), axis=2, keepdims=True), (n, c, 1, 1))
