"""Loss, SGD with momentum and weight decay, the training loop and checkpoints."""

from __future__ import annotations

import dataclasses
import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import Dataset
from .engine import Tensor, agt1, log_softmax
from .errors import ConfigError, DataError, IntegrityError, NumericError, ShapeError
from .fea import MASK_MODES, TAU_RANGE
from .metrics import mae, qwk
from .model import AGGRNet, ModelConfig, build_model


@dataclass
class TrainConfig:
    lr: float = 0.01
    momentum: float = 0.937
    weight_decay: float = 5e-4
    epochs: int = 30
    batch_size: int = 32
    seed: int = 0
    mask_mode: str = "soft"
    loss: str = "cross_entropy"
    checkpoint_every: int = 10

    def validate(self) -> "TrainConfig":
        if not self.lr > 0:
            raise ConfigError("lr must be positive")
        if not 0 <= self.momentum < 1:
            raise ConfigError("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be non-negative")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")
        if self.mask_mode not in MASK_MODES:
            raise ConfigError(f"mask_mode must be one of {MASK_MODES}")
        if self.loss != "cross_entropy":
            raise ConfigError("only loss='cross_entropy' is supported")
        if self.checkpoint_every < 0:
            raise ConfigError("checkpoint_every must be >= 0")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - names)
        if unknown:
            raise ConfigError(f"unknown train config keys: {unknown}")
        return cls(**data).validate()


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of ``labels`` under softmax(logits)."""
    labels = np.asarray(labels, dtype=np.int64)
    n, k = logits.shape
    if labels.shape != (n,):
        raise DataError(f"{labels.shape[0] if labels.ndim else 0} labels for {n} logit rows")
    if labels.min() < 0 or labels.max() >= k:
        raise DataError(f"labels must lie in [0, {k})")
    onehot = np.zeros((n, k), dtype=logits.dtype)
    onehot[np.arange(n), labels] = 1.0
    return -(log_softmax(logits, axis=1) * Tensor(onehot)).sum() * (1.0 / n)


def sgd_step(param: np.ndarray, grad: np.ndarray, velocity: np.ndarray, lr: float,
             momentum: float, weight_decay: float) -> tuple[np.ndarray, np.ndarray]:
    """Classical (coupled) SGD: v <- m v + g + wd w ; w <- w - lr v."""
    velocity = momentum * velocity + grad + weight_decay * param
    return param - lr * velocity, velocity


class SGD:
    def __init__(self, named_params, lr: float, momentum: float, weight_decay: float,
                 tau_range: tuple[float, float] = TAU_RANGE):
        self.params = dict(named_params)
        self.lr, self.momentum, self.weight_decay = lr, momentum, weight_decay
        self.tau_range = tau_range
        self.velocity = {name: np.zeros_like(p.data) for name, p in self.params.items()}

    def step(self) -> None:
        for name, p in self.params.items():
            grad = p.grad if p.grad is not None else np.zeros_like(p.data)
            new, vel = sgd_step(p.data, grad.astype(p.dtype), self.velocity[name], self.lr,
                                self.momentum, self.weight_decay)
            p.data = new.astype(p.dtype)
            self.velocity[name] = vel.astype(p.dtype)
            if name.endswith(".tau"):
                p.data = np.clip(p.data, *self.tau_range)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None


class Trainer:
    """Owns the optimizer, the shuffling RNG and the epoch counter, so a
    checkpointed run resumes exactly where it stopped."""

    def __init__(self, model: AGGRNet, tc: TrainConfig):
        tc.validate()
        self.model = model
        self.tc = tc
        self.rng = np.random.default_rng(tc.seed)
        self.optimizer = SGD(model.named_parameters(), tc.lr, tc.momentum, tc.weight_decay)
        self.epoch = 0
        self.step_count = 0
        self.history: list[dict] = []
        self.step_losses: list[float] = []
        self.tau_grad_total = {name: 0.0 for name in self.optimizer.params if name.endswith(".tau")}
        model.set_mask_mode(tc.mask_mode)

    def train_step(self, images: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
        model = self.model
        model.train()
        self.optimizer.zero_grad()
        dtype = model.parameters()[0].dtype
        logits = model(Tensor(images.astype(dtype)))
        loss = cross_entropy(logits, labels)
        value = loss.item()
        if not math.isfinite(value):
            raise NumericError(f"non-finite loss {value} at step {self.step_count}")
        loss.backward()
        for name in self.tau_grad_total:
            g = self.optimizer.params[name].grad
            if g is not None:
                self.tau_grad_total[name] += float(np.abs(g).sum())
        self.optimizer.step()
        self.step_count += 1
        self.step_losses.append(value)
        return value, logits.data.argmax(axis=1)

    def train_epoch(self, data: Dataset) -> dict:
        order = self.rng.permutation(len(data))
        total, preds = 0.0, np.empty(len(data), dtype=np.int64)
        bs = self.tc.batch_size
        for start in range(0, len(order), bs):
            idx = order[start:start + bs]
            loss, pred = self.train_step(data.images[idx], data.labels[idx])
            total += loss * len(idx)
            preds[start:start + len(idx)] = pred
        self.epoch += 1
        true = data.labels[order]
        record = {
            "epoch": self.epoch,
            "loss": total / len(order),
            "accuracy": float(np.mean(preds == true)),
            "qwk": _quiet_qwk(true, preds, data.num_classes),
            "mae": mae(true, preds),
        }
        self.history.append(record)
        return record

    def fit(self, data: Dataset, epochs: int | None = None, checkpoint_dir: str | Path | None = None,
            callback=None) -> list[dict]:
        if len(data) == 0:
            raise DataError("cannot train on an empty dataset")
        if data.num_classes != self.model.cfg.num_classes:
            raise ConfigError(f"model has {self.model.cfg.num_classes} classes, data has {data.num_classes}")
        epochs = self.tc.epochs if epochs is None else epochs
        for _ in range(epochs):
            record = self.train_epoch(data)
            if callback is not None:
                callback(record)
            every = self.tc.checkpoint_every
            if checkpoint_dir is not None and every and self.epoch % every == 0:
                save_checkpoint(Path(checkpoint_dir) / f"epoch_{self.epoch:04d}.ckpt", self)
        return self.history


def _quiet_qwk(true, pred, k) -> float:
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return qwk(true, pred, k)


def train(model: AGGRNet, data: Dataset, tc: TrainConfig) -> list[dict]:
    return Trainer(model, tc).fit(data)


# -- checkpoints --------------------------------------------------------------

CKPT_MAGIC = b"AGCKPT01"


def save_checkpoint(path: str | Path, trainer_or_model, train_config: TrainConfig | None = None) -> None:
    """Manifest JSON (names, shapes, offsets, configs, epoch, RNG state) followed
    by concatenated AGT1 records."""
    if isinstance(trainer_or_model, Trainer):
        trainer = trainer_or_model
        model, tc = trainer.model, trainer.tc
    else:
        trainer, model, tc = None, trainer_or_model, train_config
    records: list[bytes] = []
    entries = []
    offset = 0

    def put(name: str, kind: str, array: np.ndarray) -> None:
        nonlocal offset
        blob = agt1.encode(array)
        entries.append({"name": name, "kind": kind, "shape": list(array.shape),
                        "dtype": array.dtype.name, "offset": offset, "nbytes": len(blob)})
        records.append(blob)
        offset += len(blob)

    for name, p in model.named_parameters():
        put(name, "param", p.data)
    for name, b in model.named_buffers():
        put(name, "buffer", b)
    if trainer is not None:
        for name, v in trainer.optimizer.velocity.items():
            put(name, "momentum", v)
    manifest = {
        "format": 1,
        "model_config": model.cfg.to_dict(),
        "train_config": tc.to_dict() if tc is not None else None,
        "mask_mode": next((m.mode for m in model.fea_modules.values()), None),
        "epoch": trainer.epoch if trainer else 0,
        "step": trainer.step_count if trainer else 0,
        "rng_state": trainer.rng.bit_generator.state if trainer else None,
        "history": trainer.history if trainer else [],
        "tau_grad_total": trainer.tau_grad_total if trainer else {},
        "tensors": entries,
    }
    head = json.dumps(manifest, sort_keys=True).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<Q", len(head)))
        fh.write(head)
        for blob in records:
            fh.write(blob)


@dataclass
class Checkpoint:
    manifest: dict
    params: dict[str, np.ndarray]
    buffers: dict[str, np.ndarray]
    momentum: dict[str, np.ndarray]

    @property
    def model_config(self) -> ModelConfig:
        return ModelConfig.from_dict(self.manifest["model_config"])

    @property
    def train_config(self) -> TrainConfig | None:
        tc = self.manifest.get("train_config")
        return TrainConfig.from_dict(tc) if tc is not None else None

    @property
    def epoch(self) -> int:
        return int(self.manifest["epoch"])

    def build_model(self) -> AGGRNet:
        model = build_model(self.model_config, mask_mode=self.manifest.get("mask_mode") or "soft")
        if self.params:
            model.to(next(iter(self.params.values())).dtype)
        try:
            model.load_state_dict({**self.params, **self.buffers})
        except ShapeError as exc:
            raise IntegrityError(f"checkpoint tensors do not fit the stored config: {exc}") from None
        return model

    def restore_trainer(self, model: AGGRNet | None = None) -> Trainer:
        model = model if model is not None else self.build_model()
        tc = self.train_config
        if tc is None:
            raise IntegrityError("checkpoint carries no training state")
        trainer = Trainer(model, tc)
        for name, v in self.momentum.items():
            trainer.optimizer.velocity[name] = v.copy()
        trainer.epoch = self.epoch
        trainer.step_count = int(self.manifest["step"])
        trainer.history = list(self.manifest["history"])
        trainer.tau_grad_total = dict(self.manifest.get("tau_grad_total") or trainer.tau_grad_total)
        trainer.rng.bit_generator.state = self.manifest["rng_state"]
        return trainer


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise IntegrityError(f"cannot read checkpoint {path}: {exc}") from None
    if raw[:len(CKPT_MAGIC)] != CKPT_MAGIC:
        raise IntegrityError(f"{path}: not a checkpoint (bad magic)")
    pos = len(CKPT_MAGIC)
    if len(raw) < pos + 8:
        raise IntegrityError(f"{path}: truncated header")
    (head_len,) = struct.unpack_from("<Q", raw, pos)
    pos += 8
    try:
        manifest = json.loads(raw[pos:pos + head_len].decode("utf-8"))
    except (UnicodeDecodeError, ValueError) as exc:
        raise IntegrityError(f"{path}: corrupt manifest ({exc})") from None
    base = pos + head_len
    groups: dict[str, dict[str, np.ndarray]] = {"param": {}, "buffer": {}, "momentum": {}}
    try:
        for entry in manifest["tensors"]:
            array, end = agt1.decode(raw, base + entry["offset"])
            if end - (base + entry["offset"]) != entry["nbytes"] or list(array.shape) != entry["shape"]:
                raise IntegrityError(f"{path}: record {entry['name']} does not match its manifest entry")
            groups[entry["kind"]][entry["name"]] = array
    except (KeyError, TypeError) as exc:
        raise IntegrityError(f"{path}: malformed manifest ({exc})") from None
    return Checkpoint(manifest, groups["param"], groups["buffer"], groups["momentum"])
