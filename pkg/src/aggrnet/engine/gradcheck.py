from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from ..errors import UsageError
from .tensor import Tensor


def grad_check(
    f: Callable[..., Tensor],
    x: Tensor | Sequence[Tensor],
    eps: float = 1e-5,
    tol: float | None = None,
    max_coords: int | None = None,
    seed: int = 0,
) -> float:
    """Compare reverse-mode gradients against central finite differences.

    ``f`` is called as ``f(*xs)`` and must return a single-element tensor.
    Each tensor in ``x`` is perturbed in place, one coordinate at a time;
    ``max_coords`` caps the number of coordinates probed per tensor (a
    seeded random subset). Returns the maximum over probed coordinates of
    ``|analytic - numeric| / max(1, |numeric|)``. When ``tol`` is given an
    ``AssertionError`` is raised if that maximum exceeds it.
    """
    xs = [x] if isinstance(x, Tensor) else list(x)
    for t in xs:
        if t.dtype != np.float64:
            raise UsageError("grad_check requires float64 tensors")
        t.requires_grad = True
        t.grad = None

    out = f(*xs)
    if out.size != 1:
        raise UsageError(f"grad_check needs a scalar-valued function, got shape {out.shape}")
    out.backward(np.ones_like(out.data))
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in xs]

    rng = np.random.default_rng(seed)
    worst = 0.0
    for t, ga in zip(xs, analytic):
        flat = t.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = rng.choice(flat.size, size=max_coords, replace=False)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + eps
            plus = f(*xs).item()
            flat[i] = orig - eps
            minus = f(*xs).item()
            flat[i] = orig
            numeric = (plus - minus) / (2.0 * eps)
            err = abs(ga.reshape(-1)[i] - numeric) / max(1.0, abs(numeric))
            worst = max(worst, err)
    for t in xs:
        t.grad = None
    if tol is not None and worst > tol:
        raise AssertionError(f"gradient check failed: max relative error {worst:.3e} > {tol:.1e}")
    return worst
