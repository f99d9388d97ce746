"""Command-line interface: ``aggrnet {train,eval,ablate,verify,inspect}``.

Exit codes: 0 ok, 1 verification failure, 2 config error, 3 data error,
4 numeric divergence, 5 checkpoint integrity error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import Dataset, generate_synthetic, load_dataset
from .engine import set_default_dtype
from .errors import AggrNetError, ConfigError, DataError
from .metrics import EvalReport, evaluate
from .model import ModelConfig, ablation_configs, build_model, parameter_manifest
from .train import Trainer, TrainConfig, load_checkpoint, save_checkpoint

log = logging.getLogger("aggrnet")

HISTORY_FIELDS = ("epoch", "loss", "accuracy", "qwk", "mae")


@dataclass
class SyntheticConfig:
    num_classes: int = 4
    n_per_class: int = 32
    size: int = 32
    seed: int = 0
    difficulty: float = 0.0
    eval_n_per_class: int = 0


@dataclass
class DataConfig:
    path: str | None = None
    eval_path: str | None = None
    synthetic: SyntheticConfig | None = None


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    out: str = "runs/default"

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _check_keys(section: str, data, allowed) -> None:
    if not isinstance(data, dict):
        raise ConfigError(f"config section {section!r} must be an object")
    unknown = sorted(set(data) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown keys in {section!r}: {unknown}")


def _field_names(cls) -> set[str]:
    return {f.name for f in dataclasses.fields(cls)}


def parse_run_config(raw: dict) -> RunConfig:
    _check_keys("<root>", raw, _field_names(RunConfig))
    model_raw = dict(raw.get("model", {}))
    _check_keys("model", model_raw, _field_names(ModelConfig))
    preset = model_raw.get("preset", "toy")
    if preset not in ("toy", "full"):
        raise ConfigError(f"model.preset must be 'toy' or 'full', got {preset!r}")
    try:
        model = (ModelConfig.full if preset == "full" else ModelConfig.toy)(**model_raw)
        train_raw = raw.get("train", {})
        _check_keys("train", train_raw, _field_names(TrainConfig))
        train = TrainConfig(**train_raw).validate()
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    data_raw = dict(raw.get("data", {}))
    _check_keys("data", data_raw, _field_names(DataConfig))
    synth = data_raw.pop("synthetic", None)
    if synth is not None:
        _check_keys("data.synthetic", synth, _field_names(SyntheticConfig))
        synth = SyntheticConfig(**synth)
        if synth.num_classes < 2 or synth.n_per_class < 1 or synth.size < 1:
            raise ConfigError("data.synthetic needs num_classes >= 2, n_per_class >= 1, size >= 1")
    data = DataConfig(synthetic=synth, **data_raw)
    if (data.path is None) == (data.synthetic is None):
        raise ConfigError("data needs exactly one of 'path' or 'synthetic'")
    out = raw.get("out", "runs/default")
    if not isinstance(out, str) or not out:
        raise ConfigError("out must be a non-empty string")
    return RunConfig(model, train, data, out)


def _coerce(value: str):
    try:
        return json.loads(value)
    except ValueError:
        return value


def apply_overrides(raw: dict, assignments: list[str]) -> dict:
    """Apply ``a.b.c=value`` overrides; values are parsed as JSON when possible."""
    for item in assignments:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        parts = key.strip().split(".")
        node = raw
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"--set {key}: {part!r} is not a section")
        node[parts[-1]] = _coerce(value)
    return raw


def load_run_config(path: str | None, overrides: list[str], seed: int | None, out: str | None) -> RunConfig:
    raw: dict = {}
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except ValueError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    raw = apply_overrides(raw, overrides or [])
    if seed is not None:
        raw.setdefault("train", {})["seed"] = seed
    if out is not None:
        raw["out"] = out
    return parse_run_config(raw)


def load_data(cfg: DataConfig) -> tuple[Dataset, Dataset | None]:
    if cfg.synthetic is not None:
        s = cfg.synthetic
        train = generate_synthetic(s.num_classes, s.n_per_class, s.size, s.size, s.seed, s.difficulty)
        held = None
        if s.eval_n_per_class:
            held = generate_synthetic(s.num_classes, s.eval_n_per_class, s.size, s.size, s.seed + 1, s.difficulty)
        return train, held
    for p in (cfg.path, cfg.eval_path):
        if p is not None and not Path(p).is_dir():
            raise DataError(f"dataset directory not found: {p}")
    train = load_dataset(cfg.path)
    held = load_dataset(cfg.eval_path) if cfg.eval_path else None
    return train, held


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def _check_model_data(model_cfg: ModelConfig, data: Dataset) -> None:
    if data.num_classes != model_cfg.num_classes:
        raise ConfigError(f"model predicts {model_cfg.num_classes} classes but the data has {data.num_classes}")
    if data.images.shape[1:] != (model_cfg.in_channels, model_cfg.input_size, model_cfg.input_size):
        raise ConfigError(f"images of shape {data.images.shape[1:]} do not match the model input "
                          f"({model_cfg.in_channels}, {model_cfg.input_size}, {model_cfg.input_size})")


# -- commands -------------------------------------------------------------------

def cmd_train(args) -> int:
    cfg = load_run_config(args.config, args.set, args.seed, args.out)
    train_data, _ = load_data(cfg.data)
    _check_model_data(cfg.model, train_data)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    model = build_model(cfg.model, seed=cfg.train.seed, mask_mode=cfg.train.mask_mode)
    if args.float64:
        model.to(np.float64)
    trainer = Trainer(model, cfg.train)
    with open(out / "history.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(HISTORY_FIELDS)

        def on_epoch(rec):
            writer.writerow([_fmt(rec[k]) for k in HISTORY_FIELDS])
            fh.flush()
            log.info("epoch %d loss %.5f acc %.4f", rec["epoch"], rec["loss"], rec["accuracy"])

        trainer.fit(train_data, checkpoint_dir=out / "checkpoints", callback=on_epoch)
    save_checkpoint(out / "final.ckpt", trainer)
    print(f"trained {trainer.epoch} epochs; final loss {_fmt(trainer.history[-1]['loss']) if trainer.history else 'n/a'}")
    print(f"wrote {out / 'final.ckpt'}")
    return 0


def format_report(report: EvalReport, class_names: list[str]) -> str:
    lines = []
    for key in ("accuracy", "macro_precision", "macro_recall", "macro_f1", "qwk", "mae", "auc"):
        value = getattr(report, key)
        lines.append(f"{key:<16}{_fmt(value) if value is not None else 'null'}")
    lines.append("")
    width = max(len(n) for n in class_names) + 2
    lines.append(f"{'class':<{width}}{'precision':<24}{'recall':<24}{'f1':<24}")
    for i, name in enumerate(class_names):
        lines.append(f"{name:<{width}}{_fmt(report.precision[i]):<24}{_fmt(report.recall[i]):<24}{_fmt(report.f1[i]):<24}")
    lines.append("")
    lines.append("confusion (rows = true)")
    for row in report.confusion:
        lines.append("  " + " ".join(f"{v:>6d}" for v in row))
    return "\n".join(lines)


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    model = ckpt.build_model()
    if args.data is not None:
        if not Path(args.data).is_dir():
            raise DataError(f"dataset directory not found: {args.data}")
        data = load_dataset(args.data)
    elif args.config is not None:
        cfg = load_run_config(args.config, args.set, None, None)
        train_data, held = load_data(cfg.data)
        data = held if (held is not None and args.split == "eval") else train_data
    else:
        raise ConfigError("eval needs --data or --config")
    _check_model_data(model.cfg, data)
    report = evaluate(model, data)
    out = Path(args.out) if args.out else Path(args.ckpt).parent
    out.mkdir(parents=True, exist_ok=True)
    print(format_report(report, data.class_names))
    (out / "report.json").write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    return 0


def cmd_ablate(args) -> int:
    cfg = load_run_config(args.config, args.set, args.seed, args.out)
    train_data, held = load_data(cfg.data)
    _check_model_data(cfg.model, train_data)
    eval_data = held if held is not None else train_data
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for label, variant in ablation_configs(cfg.model):
        model = build_model(variant, seed=cfg.train.seed, mask_mode=cfg.train.mask_mode)
        if args.float64:
            model.to(np.float64)
        params = model.num_parameters()
        try:
            Trainer(model, dataclasses.replace(cfg.train)).fit(train_data)
            acc = _fmt(evaluate(model, eval_data).accuracy)
        except AggrNetError as exc:
            log.error("variant %r failed: %s", label, exc)
            acc = "FAILED"
        rows.append((label, acc, params))
        print(f"{label:<52} {acc:<22} {params}")
    with open(out / "ablation.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("variant", "accuracy", "params"))
        writer.writerows(rows)
    return 0


def cmd_verify(args) -> int:
    from . import fea, verify

    if args.inject_fault == "key-sign":
        with fea.inject_key_sign_fault():
            results = verify.run_all(seed=args.seed or 0, quick=args.quick)
    else:
        results = verify.run_all(seed=args.seed or 0, quick=args.quick)
    width = max(len(r.name) for r in results) + 2
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{r.name:<{width}}{status:<6}{r.value:.3e}  {r.detail}")
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"FAILED invariants: {', '.join(failed)}")
        return 1
    print(f"all {len(results)} checks passed")
    return 0


def cmd_inspect(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    model = ckpt.build_model()
    rows = parameter_manifest(model)
    width = max(len(name) for name, _, _ in rows) + 2
    print(f"{'name':<{width}}{'shape':<22}count")
    for name, shape, count in rows:
        print(f"{name:<{width}}{str(tuple(shape)):<22}{count}")
    total = sum(count for _, _, count in rows)
    print(f"total parameters: {total}")
    for pos, module in sorted(model.fea_modules.items()):
        print(f"tau[FEA@{pos}]: {_fmt(module.tau.data[0])}")
    print(f"epoch: {ckpt.epoch}")
    print("config: " + json.dumps(ckpt.manifest["model_config"], sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="aggrnet", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=False):
        p.add_argument("--config", required=config_required)
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
        p.add_argument("--seed", type=int)
        p.add_argument("--out")
        p.add_argument("--float64", action="store_true")

    p = sub.add_parser("train", help="train a model from a JSON config")
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data")
    p.add_argument("--split", choices=("train", "eval"), default="train")
    common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train the six-variant ablation grid")
    common(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("verify", help="run the invariant and gradient-check suite")
    common(p)
    p.add_argument("--quick", action="store_true")
    p.add_argument("--inject-fault", choices=("key-sign",), help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("inspect", help="print a checkpoint's parameter manifest")
    p.add_argument("ckpt")
    p.set_defaults(func=cmd_inspect, float64=False)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    threads = os.environ.get("AGGRNET_THREADS")
    if threads:
        try:
            from threadpoolctl import threadpool_limits

            threadpool_limits(int(threads))
        except ImportError:
            log.warning("threadpoolctl unavailable; AGGRNET_THREADS ignored")
    if getattr(args, "float64", False):
        set_default_dtype(np.float64)
    try:
        return args.func(args)
    except AggrNetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    finally:
        set_default_dtype(np.float32)


if __name__ == "__main__":
    sys.exit(main())
