"""Parameter containers and the basic layers the blocks are assembled from."""

from __future__ import annotations

import zlib
from collections import OrderedDict
from typing import Iterator

import numpy as np

from .engine import Tensor, conv2d, get_default_dtype, mean, sqrt
from .errors import ShapeError


def child_rng(seed: int, name: str) -> np.random.Generator:
    """Independent generator per (seed, module path) so modules initialize the same
    regardless of which other modules exist."""
    return np.random.default_rng([int(seed), zlib.crc32(name.encode())])


def kaiming_uniform(rng: np.random.Generator, shape, fan_in: int) -> Tensor:
    bound = np.sqrt(6.0 / fan_in)
    data = rng.uniform(-bound, bound, size=shape).astype(get_default_dtype())
    return Tensor(data, requires_grad=True)


class Module:
    """Minimal module tree: parameters are ``Tensor`` attributes with
    ``requires_grad``; buffers are numpy arrays named in ``_buffers``."""

    training: bool = True

    def __init__(self):
        self._buffers: list[str] = []
        self.training = True

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def register_buffer(self, name: str, value: np.ndarray) -> None:
        setattr(self, name, value)
        if name not in self._buffers:
            self._buffers.append(name)

    def _children(self) -> Iterator[tuple[str, "Module"]]:
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield f"{name}.{i}", item

    def modules(self) -> Iterator["Module"]:
        yield self
        for _, child in self._children():
            yield from child.modules()

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                yield prefix + name, value
        for name, child in self._children():
            yield from child.named_parameters(f"{prefix}{name}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name in self._buffers:
            yield prefix + name, getattr(self, name)
        for name, child in self._children():
            yield from child.named_buffers(f"{prefix}{name}.")

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        state: OrderedDict[str, np.ndarray] = OrderedDict()
        for name, p in self.named_parameters():
            state[name] = p.data.copy()
        for name, b in self.named_buffers():
            state[name] = np.array(b, copy=True)
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        expected = self.state_dict()
        missing = sorted(set(expected) - set(state))
        unexpected = sorted(set(state) - set(expected))
        if missing or unexpected:
            raise ShapeError(f"state mismatch: missing={missing} unexpected={unexpected}")
        for name, arr in state.items():
            if tuple(np.shape(arr)) != expected[name].shape:
                raise ShapeError(f"{name}: shape {np.shape(arr)} != {expected[name].shape}")
        params = dict(self.named_parameters())
        for module_path, module in self._named_modules():
            for b in module._buffers:
                key = f"{module_path}{b}"
                setattr(module, b, np.array(state[key], dtype=getattr(module, b).dtype, copy=True))
        for name, p in params.items():
            p.data = np.array(state[name], dtype=p.dtype, copy=True)

    def _named_modules(self, prefix: str = "") -> Iterator[tuple[str, "Module"]]:
        yield prefix, self
        for name, child in self._children():
            yield from child._named_modules(f"{prefix}{name}.")

    def to(self, dtype) -> "Module":
        """Cast every parameter and buffer to ``dtype`` in place."""
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.grad = None
        for _, module in self._named_modules():
            for b in module._buffers:
                setattr(module, b, getattr(module, b).astype(dtype))
        return self


class Conv2d(Module):
    """Plain convolution with bias."""

    def __init__(self, cin: int, cout: int, k: int = 1, stride: int = 1, padding: int | None = None,
                 bias: bool = True, rng: np.random.Generator | None = None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.stride = stride
        self.padding = k // 2 if padding is None else padding
        self.weight = kaiming_uniform(rng, (cout, cin, k, k), cin * k * k)
        self.bias = Tensor(np.zeros(cout, dtype=get_default_dtype()), requires_grad=True) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias, self.stride, self.padding)


class BatchNorm2d(Module):
    def __init__(self, channels: int, eps: float = 1e-5, momentum: float = 0.1):
        super().__init__()
        dtype = get_default_dtype()
        self.eps = eps
        self.momentum = momentum
        self.weight = Tensor(np.ones(channels, dtype=dtype), requires_grad=True)
        self.bias = Tensor(np.zeros(channels, dtype=dtype), requires_grad=True)
        self.register_buffer("running_mean", np.zeros(channels, dtype=dtype))
        self.register_buffer("running_var", np.ones(channels, dtype=dtype))

    def forward(self, x: Tensor) -> Tensor:
        c = x.shape[1]
        scale = self.weight.reshape(1, c, 1, 1)
        shift = self.bias.reshape(1, c, 1, 1)
        if not self.training:
            inv = 1.0 / np.sqrt(self.running_var + self.eps)
            xhat = (x - Tensor(self.running_mean.reshape(1, c, 1, 1).astype(x.dtype))) \
                * Tensor(inv.reshape(1, c, 1, 1).astype(x.dtype))
            return xhat * scale + shift
        mu = mean(x, axis=(0, 2, 3), keepdims=True)
        centered = x - mu
        var = mean(centered * centered, axis=(0, 2, 3), keepdims=True)
        xhat = centered / sqrt(var + self.eps)
        count = x.shape[0] * x.shape[2] * x.shape[3]
        unbiased = var.data.reshape(c) * (count / (count - 1) if count > 1 else 1.0)
        m = self.momentum
        self.running_mean = ((1 - m) * self.running_mean + m * mu.data.reshape(c)).astype(self.running_mean.dtype)
        self.running_var = ((1 - m) * self.running_var + m * unbiased).astype(self.running_var.dtype)
        return xhat * scale + shift


class Linear(Module):
    def __init__(self, fin: int, fout: int, rng: np.random.Generator | None = None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        bound = 1.0 / np.sqrt(fin)
        dtype = get_default_dtype()
        self.weight = Tensor(rng.uniform(-bound, bound, size=(fout, fin)).astype(dtype), requires_grad=True)
        self.bias = Tensor(np.zeros(fout, dtype=dtype), requires_grad=True)

    def forward(self, x: Tensor) -> Tensor:
        return x @ self.weight.transpose() + self.bias
