"""Convolutional building blocks of the classification backbone."""

from __future__ import annotations

import numpy as np

from .attention import ChannelAttention, channel_attention, from_tokens, scaled_dot_attention, to_tokens
from .engine import Tensor, add, concat, maxpool2d, mul, sigmoid, silu, split
from .errors import ConfigError, ShapeError
from .nn import BatchNorm2d, Conv2d, Module


def _rng(rng):
    return rng if rng is not None else np.random.default_rng(0)


class ConvBlock(Module):
    """conv (no bias) -> batch norm -> SiLU."""

    def __init__(self, cin: int, cout: int, k: int = 1, stride: int = 1, rng=None):
        super().__init__()
        self.cin, self.cout = cin, cout
        self.conv = Conv2d(cin, cout, k, stride, bias=False, rng=_rng(rng))
        self.bn = BatchNorm2d(cout)

    def forward(self, x: Tensor) -> Tensor:
        return conv_block(x, self)


def conv_block(x: Tensor, p: ConvBlock) -> Tensor:
    return silu(p.bn(p.conv(x)))


class Bottleneck(Module):
    def __init__(self, c: int, shortcut: bool = True, rng=None):
        super().__init__()
        rng = _rng(rng)
        self.cv1 = ConvBlock(c, c, 3, rng=rng)
        self.cv2 = ConvBlock(c, c, 3, rng=rng)
        self.shortcut = shortcut

    def forward(self, x: Tensor) -> Tensor:
        y = self.cv2(self.cv1(x))
        return add(x, y) if self.shortcut else y


class C3k2(Module):
    """Cross-stage partial block: 1x1 conv, split, n bottlenecks on one half,
    concat every intermediate, 1x1 conv to the output width."""

    def __init__(self, cin: int, cout: int, n: int = 1, rng=None):
        super().__init__()
        if cout % 2:
            raise ConfigError(f"C3k2 output width {cout} must be even to split")
        rng = _rng(rng)
        self.cin, self.cout, self.hidden = cin, cout, cout // 2
        self.cv1 = ConvBlock(cin, 2 * self.hidden, 1, rng=rng)
        self.m = [Bottleneck(self.hidden, rng=rng) for _ in range(n)]
        self.cv2 = ConvBlock((2 + n) * self.hidden, cout, 1, rng=rng)

    def forward(self, x: Tensor) -> Tensor:
        return c3k2(x, self)


def c3k2(x: Tensor, p: C3k2) -> Tensor:
    if x.shape[1] != p.cin:
        raise ShapeError(f"c3k2: expected {p.cin} input channels, got {x.shape[1]}")
    branches = split(p.cv1(x), axis=1, parts=2)
    for unit in p.m:
        branches.append(unit(branches[-1]))
    return p.cv2(concat(branches, axis=1))


class SPPF(Module):
    def __init__(self, cin: int, cout: int, k: int = 5, rng=None):
        super().__init__()
        rng = _rng(rng)
        hidden = cin // 2
        self.k = k
        self.cv1 = ConvBlock(cin, hidden, 1, rng=rng)
        self.cv2 = ConvBlock(4 * hidden, cout, 1, rng=rng)

    def forward(self, x: Tensor) -> Tensor:
        return sppf(x, self)


def sppf(x: Tensor, p: SPPF) -> Tensor:
    y = p.cv1(x)
    pools = [y]
    for _ in range(3):
        pools.append(maxpool2d(pools[-1], p.k, stride=1, padding=p.k // 2))
    return p.cv2(concat(pools, axis=1))


class FFN(Module):
    """1x1 conv (C -> eC) -> SiLU -> 1x1 conv (eC -> C)."""

    def __init__(self, c: int, expansion: int = 2, rng=None):
        super().__init__()
        rng = _rng(rng)
        self.fc1 = Conv2d(c, expansion * c, 1, rng=rng)
        self.fc2 = Conv2d(expansion * c, c, 1, rng=rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.fc2(silu(self.fc1(x)))


class C2PCA(Module):
    """Cross-stage partial block with channel attention; doubles the channels."""

    def __init__(self, c: int, reduction: int = 16, expansion: int = 2, rng=None):
        super().__init__()
        rng = _rng(rng)
        self.c = c
        self.expand = ConvBlock(c, 2 * c, 1, rng=rng)
        self.ca = ChannelAttention(c, reduction, rng=rng)
        self.ffn = FFN(c, expansion, rng=rng)

    def forward(self, x: Tensor) -> Tensor:
        return c2pca(x, self)


def c2pca(x: Tensor, p: C2PCA) -> Tensor:
    if x.ndim != 4 or x.shape[1] != p.c:
        raise ShapeError(f"c2pca: expected (N,{p.c},H,W), got {x.shape}")
    x_a, x_b = split(p.expand(x), axis=1, parts=2)
    x_b_att = mul(sigmoid(channel_attention(x_b, p.ca)), x_b)
    x_b_res1 = add(x_b, x_b_att)
    x_b_out = add(x_b_res1, p.ffn(x_b_res1))
    return concat([x_a, x_b_out], axis=1)


class C2PSA(Module):
    """Baseline block: same skeleton as C2PCA with spatial self-attention in the
    active branch (1x1 conv projections for queries, keys and values)."""

    def __init__(self, c: int, expansion: int = 2, rng=None):
        super().__init__()
        rng = _rng(rng)
        self.c = c
        self.expand = ConvBlock(c, 2 * c, 1, rng=rng)
        self.q = Conv2d(c, c, 1, rng=rng)
        self.k = Conv2d(c, c, 1, rng=rng)
        self.v = Conv2d(c, c, 1, rng=rng)
        self.ffn = FFN(c, expansion, rng=rng)

    def forward(self, x: Tensor) -> Tensor:
        return c2psa(x, self)


def self_attention_branch(x_b: Tensor, p: C2PSA) -> Tensor:
    h, w = x_b.shape[2:]
    out = scaled_dot_attention(to_tokens(p.q(x_b)), to_tokens(p.k(x_b)), to_tokens(p.v(x_b)))
    return from_tokens(out, h, w)


def c2psa(x: Tensor, p: C2PSA) -> Tensor:
    if x.ndim != 4 or x.shape[1] != p.c:
        raise ShapeError(f"c2psa: expected (N,{p.c},H,W), got {x.shape}")
    x_a, x_b = split(p.expand(x), axis=1, parts=2)
    x_b_res1 = add(x_b, self_attention_branch(x_b, p))
    x_b_out = add(x_b_res1, p.ffn(x_b_res1))
    return concat([x_a, x_b_out], axis=1)
