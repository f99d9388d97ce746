"""Feature extraction and aggregation (FEA).

The extraction step scores every element of a feature map with
``sigmoid(spatial_logits + channel_logits)`` and splits the map at a learnable
threshold ``tau`` into informative and non-informative parts. The
aggregation step runs contrast-based cross-attention over spatial tokens with

    Q = info + ninfo,   K = info - ninfo,   V = info

and the module output adds the input back as a residual.

Mask modes:
    hard  binary masks ``[S >= tau]`` (used at inference; no gradient to tau)
    soft  ``sigmoid(kappa * (S - tau))`` (trainable, default while training)
    ste   hard values forward, soft gradient backward
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass

import numpy as np

from .attention import (
    ChannelAttention,
    SpatialAttention,
    channel_attention,
    from_tokens,
    scaled_dot_attention,
    spatial_attention,
    to_tokens,
)
from .engine import Tensor, add, get_default_dtype, matmul, sigmoid, straight_through, sub, transpose
from .errors import ShapeError
from .nn import Module

MASK_MODES = ("hard", "soft", "ste")
TAU_INIT = 0.5
TAU_RANGE = (0.01, 0.99)

# Sign applied to the non-informative part when forming the key. Only the
# verification suite's mutation test changes it.
_key_sign = -1.0


@contextlib.contextmanager
def inject_key_sign_fault():
    """Build keys as info + ninfo instead of info - ninfo (mutation testing only)."""
    global _key_sign
    _key_sign = 1.0
    try:
        yield
    finally:
        _key_sign = -1.0


class FEA(Module):
    def __init__(self, channels: int, reduction: int = 16, kernel_size: int = 7,
                 kappa: float = 10.0, mode: str = "soft", rng: np.random.Generator | None = None):
        super().__init__()
        if kappa <= 0:
            raise ValueError("kappa must be positive")
        if mode not in MASK_MODES:
            raise ValueError(f"mask mode must be one of {MASK_MODES}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.channels = channels
        self.sa = SpatialAttention(kernel_size, rng=rng)
        self.ca = ChannelAttention(channels, reduction, rng=rng)
        self.tau = Tensor(np.full(1, TAU_INIT, dtype=get_default_dtype()), requires_grad=True)
        self.kappa = float(kappa)
        self.mode = mode

    def forward(self, x: Tensor) -> Tensor:
        return fea_forward(x, self, self.mode if self.training else "hard")


@dataclass
class SegregatedFeatures:
    x_info: Tensor
    x_ninfo: Tensor
    scores: Tensor
    w_info: Tensor
    w_ninfo: Tensor


def attention_scores(x: Tensor, p: FEA) -> Tensor:
    """S = sigmoid(SA(x) + CA(x)), broadcast to x's shape."""
    return sigmoid(add(spatial_attention(x, p.sa), channel_attention(x, p.ca)))


def segregation_masks(scores: Tensor, tau: Tensor, kappa: float, mode: str) -> tuple[Tensor, Tensor]:
    if mode not in MASK_MODES:
        raise ValueError(f"mask mode must be one of {MASK_MODES}")
    if mode == "hard":
        w_info = Tensor((scores.data >= tau.data).astype(scores.dtype))
        w_ninfo = Tensor((scores.data < tau.data).astype(scores.dtype))
        return w_info, w_ninfo
    soft = sigmoid(sub(scores, tau) * kappa)
    if mode == "soft":
        return soft, 1.0 - soft
    hard = (scores.data >= tau.data).astype(scores.dtype)
    w_info = straight_through(hard, soft)
    w_ninfo = straight_through(1.0 - hard, 1.0 - soft)
    return w_info, w_ninfo


def fem_forward(x: Tensor, p: FEA, mode: str = "hard") -> SegregatedFeatures:
    if x.ndim != 4 or x.shape[1] != p.channels:
        raise ShapeError(f"fem_forward: expected (N,{p.channels},H,W), got {x.shape}")
    scores = attention_scores(x, p)
    w_info, w_ninfo = segregation_masks(scores, p.tau, p.kappa, mode)
    return SegregatedFeatures(w_info * x, w_ninfo * x, scores, w_info, w_ninfo)


def contrast_qkv(x_info: Tensor, x_ninfo: Tensor) -> tuple[Tensor, Tensor, Tensor]:
    if x_info.shape != x_ninfo.shape:
        raise ShapeError(f"informative/non-informative shapes differ: {x_info.shape} vs {x_ninfo.shape}")
    q = add(x_info, x_ninfo)
    k = sub(x_info, x_ninfo) if _key_sign < 0 else add(x_info, x_ninfo)
    return q, k, x_info


def fam_forward(seg: SegregatedFeatures) -> Tensor:
    n, c, h, w = seg.x_info.shape
    q, k, v = contrast_qkv(to_tokens(seg.x_info), to_tokens(seg.x_ninfo))
    return from_tokens(scaled_dot_attention(q, k, v), h, w)


def fea_forward(x: Tensor, p: FEA, mode: str = "hard") -> Tensor:
    return add(fam_forward(fem_forward(x, p, mode)), x)


def _as_tokens(a) -> np.ndarray:
    arr = a.data if isinstance(a, Tensor) else np.asarray(a)
    if arr.ndim == 4:
        n, c, h, w = arr.shape
        arr = arr.reshape(n, c, h * w).transpose(0, 2, 1)
    elif arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3:
        raise ShapeError(f"expected token matrices (T,d), (N,T,d) or maps (N,C,H,W), got {arr.shape}")
    return arr


def qk_contrast_expansion_check(x_info, x_ninfo) -> float:
    """Max |Q K^T - (I I^T - I N^T + N I^T - N N^T)| over all token pairs.

    Q and K are built by the same code path the aggregation step uses, the
    four-term expansion directly from the token matrices.
    """
    i_tok, n_tok = _as_tokens(x_info), _as_tokens(x_ninfo)
    if i_tok.shape != n_tok.shape:
        raise ShapeError(f"token shapes differ: {i_tok.shape} vs {n_tok.shape}")
    q, k, _ = contrast_qkv(Tensor(i_tok), Tensor(n_tok))
    qk = matmul(q, transpose(k, (0, 2, 1))).data
    it, nt = i_tok.transpose(0, 2, 1), n_tok.transpose(0, 2, 1)
    expansion = i_tok @ it - i_tok @ nt + n_tok @ it - n_tok @ nt
    return float(np.max(np.abs(qk - expansion)))
