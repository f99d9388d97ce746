from .functional import conv2d, global_avg_pool, global_max_pool, maxpool2d, pad2d
from .gradcheck import grad_check
from .tensor import (
    Tensor,
    add,
    concat,
    detach,
    div,
    exp,
    get_default_dtype,
    is_grad_enabled,
    log,
    log_softmax,
    matmul,
    mean,
    mul,
    narrow,
    no_grad,
    ones,
    ones_like,
    power,
    precision,
    relu,
    reshape,
    set_default_dtype,
    sigmoid,
    silu,
    softmax,
    split,
    straight_through,
    sqrt,
    sub,
    tensor,
    tmax,
    transpose,
    tsum,
    unbroadcast,
    zeros,
)

__all__ = [
    "Tensor", "add", "concat", "conv2d", "detach", "div", "exp", "get_default_dtype",
    "global_avg_pool", "global_max_pool", "grad_check", "is_grad_enabled", "log",
    "log_softmax", "matmul", "maxpool2d", "mean", "mul", "narrow", "no_grad", "ones",
    "ones_like", "pad2d", "power", "precision", "relu", "reshape", "set_default_dtype", "sigmoid",
    "silu", "softmax", "split", "straight_through", "sqrt", "sub", "tensor", "tmax", "transpose", "tsum",
    "unbroadcast", "zeros",
]
