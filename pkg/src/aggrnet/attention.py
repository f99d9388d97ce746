"""Channel attention, spatial attention and scaled dot-product attention.

Channel and spatial attention follow the convolutional block attention
module: a shared two-layer MLP over global average and max pools, and a
k x k convolution over the stacked channel-mean / channel-max maps. Both
return *logits*; callers apply the sigmoid where they need gates.
"""

from __future__ import annotations

import numpy as np

from .engine import (
    Tensor,
    concat,
    conv2d,
    get_default_dtype,
    global_avg_pool,
    global_max_pool,
    matmul,
    mean,
    relu,
    reshape,
    softmax,
    tmax,
    transpose,
)
from .errors import ShapeError
from .nn import Module, kaiming_uniform


class ChannelAttention(Module):
    def __init__(self, channels: int, reduction: int = 16, min_hidden: int = 4,
                 rng: np.random.Generator | None = None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        hidden = max(channels // reduction, min(min_hidden, channels), 1)
        self.channels = channels
        self.hidden = hidden
        self.mlp_w1 = kaiming_uniform(rng, (hidden, channels), channels)
        self.mlp_w2 = kaiming_uniform(rng, (channels, hidden), hidden)

    @property
    def reduction_ratio(self) -> float:
        return self.channels / self.hidden

    def forward(self, x: Tensor) -> Tensor:
        return channel_attention(x, self)


class SpatialAttention(Module):
    def __init__(self, kernel_size: int = 7, padding_mode: str = "zeros",
                 rng: np.random.Generator | None = None):
        super().__init__()
        if kernel_size % 2 == 0:
            raise ShapeError("spatial attention kernel must be odd")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.kernel_size = kernel_size
        self.padding_mode = padding_mode
        self.conv_w = kaiming_uniform(rng, (1, 2, kernel_size, kernel_size), 2 * kernel_size ** 2)
        self.conv_b = Tensor(np.zeros(1, dtype=get_default_dtype()), requires_grad=True)

    def forward(self, x: Tensor) -> Tensor:
        return spatial_attention(x, self)


def _shared_mlp(pooled: Tensor, p: ChannelAttention) -> Tensor:
    n, c = pooled.shape[:2]
    v = reshape(pooled, (n, c))
    h = relu(matmul(v, transpose(p.mlp_w1)))
    return matmul(h, transpose(p.mlp_w2))


def channel_attention(x: Tensor, p: ChannelAttention) -> Tensor:
    """Channel-attention logits of shape (N, C, 1, 1)."""
    if x.ndim != 4 or x.shape[1] != p.channels:
        raise ShapeError(f"channel_attention: expected (N,{p.channels},H,W), got {x.shape}")
    n, c = x.shape[:2]
    logits = _shared_mlp(global_avg_pool(x), p) + _shared_mlp(global_max_pool(x), p)
    return reshape(logits, (n, c, 1, 1))


def spatial_attention(x: Tensor, p: SpatialAttention) -> Tensor:
    """Spatial-attention logits of shape (N, 1, H, W)."""
    if x.ndim != 4:
        raise ShapeError(f"spatial_attention expects NCHW input, got {x.shape}")
    stacked = concat([mean(x, axis=1, keepdims=True), tmax(x, axis=1, keepdims=True)], axis=1)
    pad = (p.kernel_size - 1) // 2
    return conv2d(stacked, p.conv_w, p.conv_b, stride=1, padding=pad, padding_mode=p.padding_mode)


def attention_weights(q: Tensor, k: Tensor) -> Tensor:
    """Row-stochastic matrix softmax(q k^T / sqrt(d)) over the key axis."""
    d = q.shape[-1]
    scores = matmul(q, transpose(k, (0, 2, 1))) * (1.0 / np.sqrt(d))
    return softmax(scores, axis=-1)


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    if q.ndim != 3 or q.shape != k.shape or q.shape != v.shape:
        raise ShapeError(f"scaled_dot_attention expects equal (N,T,d) shapes, got {q.shape}, {k.shape}, {v.shape}")
    if q.shape[-1] < 1:
        raise ShapeError("token dimension must be >= 1")
    return matmul(attention_weights(q, k), v)


def to_tokens(x: Tensor) -> Tensor:
    """(N, C, H, W) -> (N, H*W, C): one token per spatial position."""
    n, c, h, w = x.shape
    return transpose(reshape(x, (n, c, h * w)), (0, 2, 1))


def from_tokens(t: Tensor, height: int, width: int) -> Tensor:
    n, _, c = t.shape
    return reshape(transpose(t, (0, 2, 1)), (n, c, height, width))
