"""Self-verification suite run by ``aggrnet verify``.

Every check returns a ``CheckResult``; the CLI prints them as a matrix and
exits non-zero if any fails.
"""

from __future__ import annotations

import itertools
import time
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import metrics
from .attention import ChannelAttention, SpatialAttention, attention_weights, channel_attention, spatial_attention
from .blocks import C2PCA, C2PSA, SPPF, C3k2, ConvBlock
from .engine import Tensor, grad_check, precision, softmax, tsum
from .fea import FEA, SegregatedFeatures, fam_forward, fea_forward, fem_forward, qk_contrast_expansion_check
from .model import ModelConfig, build_model
from .nn import BatchNorm2d
from .train import cross_entropy

GRAD_TOL = 1e-4


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float
    detail: str = ""


def _rand(rng, shape) -> Tensor:
    return Tensor(rng.standard_normal(shape), requires_grad=True)


def _weighted_sum(out: Tensor, weights: np.ndarray) -> Tensor:
    return tsum(out * Tensor(weights))


def _check_module(module, x: Tensor, fn: Callable[[Tensor], Tensor], rng, max_coords: int) -> float:
    out_shape = fn(x).shape
    weights = rng.standard_normal(out_shape)
    tensors = [x] + module.parameters()
    return grad_check(lambda *_: _weighted_sum(fn(x), weights), tensors, max_coords=max_coords,
                      seed=int(rng.integers(1 << 31)))


def block_gradient_errors(seed: int = 0, max_coords: int = 8) -> dict[str, list[float]]:
    """float64 central-difference errors, three random shapes per block."""
    rng = np.random.default_rng(seed)
    results: dict[str, list[float]] = {}
    with precision(np.float64):
        for shape in [(1, 3, 4, 4), (2, 4, 5, 3), (1, 2, 6, 6)]:
            sa = SpatialAttention(kernel_size=3, rng=rng)
            results.setdefault("spatial_attention", []).append(
                _check_module(sa, _rand(rng, shape), lambda x: spatial_attention(x, sa), rng, max_coords))
        for shape in [(1, 4, 3, 3), (2, 8, 2, 2), (1, 6, 4, 1)]:
            ca = ChannelAttention(shape[1], reduction=2, min_hidden=2, rng=rng)
            results.setdefault("channel_attention", []).append(
                _check_module(ca, _rand(rng, shape), lambda x: channel_attention(x, ca), rng, max_coords))
        for shape in [(1, 4, 3, 3), (2, 4, 2, 3), (1, 8, 4, 4)]:
            fea = FEA(shape[1], reduction=2, kernel_size=3, rng=rng)
            w1, w2 = rng.standard_normal(shape), rng.standard_normal(shape)

            def fem_loss(x, fea=fea, w1=w1, w2=w2):
                seg = fem_forward(x, fea, "soft")
                return tsum(seg.x_info * Tensor(w1)) + tsum(seg.x_ninfo * Tensor(w2))

            x = _rand(rng, shape)
            results.setdefault("fem_soft", []).append(
                grad_check(lambda *_: fem_loss(x), [x] + fea.parameters(), max_coords=max_coords))
        for shape in [(1, 2, 2, 2), (2, 3, 2, 3), (1, 4, 3, 3)]:
            xi, xn = _rand(rng, shape), _rand(rng, shape)
            w = rng.standard_normal(shape)

            def fam_loss(*_, xi=xi, xn=xn, w=w):
                seg = SegregatedFeatures(xi, xn, xi, xi, xi)
                return _weighted_sum(fam_forward(seg), w)

            results.setdefault("fam", []).append(grad_check(fam_loss, [xi, xn], max_coords=max_coords))
        for shape in [(1, 4, 3, 3), (2, 4, 2, 2), (1, 8, 4, 3)]:
            fea = FEA(shape[1], reduction=2, kernel_size=3, rng=rng)
            results.setdefault("fea", []).append(
                _check_module(fea, _rand(rng, shape), lambda x: fea_forward(x, fea, "soft"), rng, max_coords))
        for shape, (cout, k, s) in zip([(2, 3, 5, 5), (3, 2, 4, 4), (2, 4, 6, 5)], [(4, 3, 1), (3, 1, 1), (2, 3, 2)]):
            cb = ConvBlock(shape[1], cout, k, s, rng=rng)
            results.setdefault("conv_block", []).append(
                _check_module(cb, _rand(rng, shape), cb, rng, max_coords))
        for shape, n in zip([(2, 4, 4, 4), (2, 2, 3, 3), (3, 4, 2, 2)], [1, 0, 2]):
            blk = C3k2(shape[1], 4, n, rng=rng)
            results.setdefault("c3k2", []).append(_check_module(blk, _rand(rng, shape), blk, rng, max_coords))
        for shape in [(2, 4, 4, 4), (2, 2, 3, 3), (3, 6, 5, 2)]:
            blk = SPPF(shape[1], shape[1], rng=rng)
            results.setdefault("sppf", []).append(_check_module(blk, _rand(rng, shape), blk, rng, max_coords))
        for shape in [(2, 4, 3, 3), (2, 2, 2, 2), (3, 3, 1, 4)]:
            blk = C2PSA(shape[1], rng=rng)
            results.setdefault("c2psa", []).append(_check_module(blk, _rand(rng, shape), blk, rng, max_coords))
        for shape in [(2, 4, 3, 3), (2, 2, 2, 2), (3, 6, 1, 4)]:
            blk = C2PCA(shape[1], reduction=2, rng=rng)
            results.setdefault("c2pca", []).append(_check_module(blk, _rand(rng, shape), blk, rng, max_coords))
        results["model_ce"] = model_gradient_errors(seed, max_coords=1)
        results["model_ce_frozen_norms"] = model_gradient_errors(seed, max_coords=1, frozen_norms=True)
    return results


def model_gradient_errors(seed: int = 0, max_coords: int = 1, frozen_norms: bool = False) -> list[float]:
    """Toy AGGRNet (soft masks) + cross-entropy, float64, three (batch, classes) shapes.

    Train-mode batch norm over a 1x1 deepest map is degenerate for a batch of
    two (each channel normalizes to exactly +-1, producing exact ties in the
    max reductions), so train-mode checks use batches of 4-5; ``frozen_norms``
    switches the norm layers to running statistics and uses 2-sample batches.
    """
    rng = np.random.default_rng(seed + 1)
    shapes = [(2, 4), (2, 3), (2, 5)] if frozen_norms else [(4, 4), (5, 3), (4, 5)]
    errors = []
    with precision(np.float64):
        for n, k in shapes:
            model = build_model(ModelConfig.toy(num_classes=k), seed=int(rng.integers(1000)))
            if frozen_norms:
                for m in model.modules():
                    if isinstance(m, BatchNorm2d):
                        m.training = False
            x = Tensor(rng.random((n, 3, 32, 32)), requires_grad=True)
            labels = rng.integers(0, k, size=n)
            errors.append(grad_check(lambda *_: cross_entropy(model(x), labels), [x] + model.parameters(),
                                     max_coords=max_coords, seed=int(rng.integers(1 << 31))))
    return errors


def segregation_errors(trials: int, seed: int = 0) -> dict[str, float]:
    """Worst-case violations of the FEM invariants over random inputs."""
    rng = np.random.default_rng(seed)
    worst = {"hard_mask_sum": 0.0, "soft_mask_sum": 0.0, "recompose": 0.0, "hard_overlap": 0.0,
             "tau_monotone": 0.0}
    fea = FEA(4, reduction=2, kernel_size=3, rng=rng)
    taus = np.linspace(0.05, 0.95, 7)
    for _ in range(trials):
        shape = (int(rng.integers(1, 3)), 4, int(rng.integers(1, 5)), int(rng.integers(1, 5)))
        x = Tensor((rng.standard_normal(shape) * rng.uniform(0.1, 10)).astype(np.float32))
        fea.tau.data[...] = rng.uniform(0.05, 0.95)
        hard = fem_forward(x, fea, "hard")
        soft = fem_forward(x, fea, "soft")
        worst["hard_mask_sum"] = max(worst["hard_mask_sum"], float(np.abs(hard.w_info.data + hard.w_ninfo.data - 1).max()))
        worst["soft_mask_sum"] = max(worst["soft_mask_sum"], float(np.abs(soft.w_info.data + soft.w_ninfo.data - 1).max()))
        for seg in (hard, soft):
            worst["recompose"] = max(worst["recompose"], float(np.abs(seg.x_info.data + seg.x_ninfo.data - x.data).max()))
        worst["hard_overlap"] = max(worst["hard_overlap"], float(np.abs(hard.x_info.data * hard.x_ninfo.data).max()))
        for mode in ("hard", "soft"):
            previous = None
            for tau in taus:
                fea.tau.data[...] = tau
                w = fem_forward(x, fea, mode).w_info.data
                if previous is not None:
                    worst["tau_monotone"] = max(worst["tau_monotone"], float((w - previous).max()))
                previous = w
    return worst


def qk_identity_errors(trials: int, seed: int = 0) -> dict[str, float]:
    rng = np.random.default_rng(seed)
    worst = {"float32": 0.0, "float64": 0.0}
    for _ in range(trials):
        t, d = int(rng.integers(1, 17)), int(rng.integers(1, 9))
        i64, n64 = rng.standard_normal((2, t, d)), rng.standard_normal((2, t, d))
        worst["float64"] = max(worst["float64"], qk_contrast_expansion_check(i64, n64))
        worst["float32"] = max(worst["float32"], qk_contrast_expansion_check(i64.astype(np.float32), n64.astype(np.float32)))
    return worst


def _metric_oracle_error(trials: int, seed: int = 0) -> float:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        k = int(rng.integers(2, 6))
        n = int(rng.integers(2, 51))
        true = rng.integers(0, k, n)
        pred = rng.integers(0, k, n)
        worst = max(worst, abs(metrics.mae(true, pred) - sum(abs(a - b) for a, b in zip(true, pred)) / n))
        worst = max(worst, abs(metrics.accuracy(metrics.confusion_matrix(true, pred, k))
                               - sum(a == b for a, b in zip(true, pred)) / n))
        num = den = 0.0
        for a, b in itertools.product(range(n), repeat=2):
            w = (true[a] - pred[b]) ** 2
            den += w / n
        for a in range(n):
            num += (true[a] - pred[a]) ** 2
        expected = 1.0 if den == 0 else 1 - num / den
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            worst = max(worst, abs(metrics.qwk(true, pred, k) - expected))
    return worst


def run_all(seed: int = 0, quick: bool = False) -> list[CheckResult]:
    results: list[CheckResult] = []
    start = time.perf_counter()
    for name, errs in block_gradient_errors(seed, max_coords=4 if quick else 8).items():
        worst = max(errs)
        results.append(CheckResult(f"grad:{name}", worst <= GRAD_TOL, worst,
                                   "max rel err over shapes " + ", ".join(f"{e:.1e}" for e in errs)))
    seg = segregation_errors(50 if quick else 200, seed)
    results.append(CheckResult("fem:hard_complementary", seg["hard_mask_sum"] == 0.0, seg["hard_mask_sum"]))
    results.append(CheckResult("fem:soft_complementary", seg["soft_mask_sum"] <= 1e-6, seg["soft_mask_sum"]))
    results.append(CheckResult("fem:recompose", seg["recompose"] <= 1e-5, seg["recompose"]))
    results.append(CheckResult("fem:hard_disjoint", seg["hard_overlap"] == 0.0, seg["hard_overlap"]))
    results.append(CheckResult("fem:tau_monotone", seg["tau_monotone"] <= 0.0, seg["tau_monotone"]))
    qk = qk_identity_errors(100, seed)
    results.append(CheckResult("fam:qk_identity_f32", qk["float32"] <= 1e-5, qk["float32"]))
    results.append(CheckResult("fam:qk_identity_f64", qk["float64"] <= 1e-10, qk["float64"]))
    rng = np.random.default_rng(seed)
    row_err = 0.0
    for _ in range(100):
        q = Tensor(rng.standard_normal((2, 5, 3)) * 1e3)
        k = Tensor(rng.standard_normal((2, 5, 3)) * 1e3)
        a = attention_weights(q, k).data
        row_err = max(row_err, float(np.abs(a.sum(-1) - 1).max()), float(-a.min()))
    results.append(CheckResult("attention:rows_stochastic", row_err <= 1e-6, row_err))
    sm = softmax(Tensor(np.array([1000.0, 1000.5]))).data
    results.append(CheckResult("softmax:large_logits", bool(np.isfinite(sm).all()) and abs(sm.sum() - 1) <= 1e-6,
                               float(abs(sm.sum() - 1))))
    blk = C2PCA(4, reduction=2, rng=rng).eval()
    x = Tensor(rng.standard_normal((2, 4, 3, 3)).astype(np.float32))
    out = blk(x).data
    xa = blk.expand(x).data[:, :4]
    results.append(CheckResult("c2pca:channels_doubled", out.shape[1] == 8, float(out.shape[1])))
    results.append(CheckResult("c2pca:passthrough_half", bool(np.array_equal(out[:, :4], xa)), 0.0))
    oracle = _metric_oracle_error(100 if quick else 300, seed)
    results.append(CheckResult("metrics:oracles", oracle <= 1e-9, oracle))
    results.append(CheckResult("suite:runtime_s", True, time.perf_counter() - start))
    return results
