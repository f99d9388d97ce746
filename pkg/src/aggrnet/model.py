"""AGGRNet assembly and its ablation variants.

Layout: stem conv (stride 2) -> four stages [conv stride 2 -> C3k2] ->
optional SPPF -> C2PCA or C2PSA -> global average pool -> linear head.
FEA modules sit after the three deepest stages; position 1 is the deepest
(after stage 5), position 3 the shallowest (after stage 3).
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

from .blocks import C2PCA, C2PSA, SPPF, C3k2, ConvBlock
from .engine import Tensor, global_avg_pool, reshape
from .errors import ConfigError, ShapeError
from .fea import FEA, MASK_MODES
from .nn import Linear, Module, child_rng

# FEA position -> index of the stage it follows (stages numbered 1..5, stem = 1)
POSITION_TO_STAGE = {1: 5, 2: 4, 3: 3}
ATTENTION_BLOCKS = ("C2PCA", "C2PSA")


@dataclass
class ModelConfig:
    stage_widths: list[int] = field(default_factory=lambda: [16, 32, 64, 128, 256])
    stage_depths: list[int] = field(default_factory=lambda: [1, 1, 1, 1])
    fea_positions: list[int] = field(default_factory=lambda: [1, 2, 3])
    attention_block: str = "C2PCA"
    use_sppf: bool = True
    num_classes: int = 4
    input_size: int = 32
    in_channels: int = 3
    ca_reduction: int = 16
    sa_kernel: int = 7
    kappa: float = 10.0
    ffn_expansion: int = 2
    preset: str = "toy"

    def validate(self) -> "ModelConfig":
        if len(self.stage_widths) != 5 or any(int(w) <= 0 for w in self.stage_widths):
            raise ConfigError(f"stage_widths must be 5 positive ints, got {self.stage_widths}")
        if any(int(w) % 2 for w in self.stage_widths[1:]):
            raise ConfigError("stage widths 2..5 must be even (C3k2 splits them)")
        if len(self.stage_depths) != 4 or any(int(d) < 0 for d in self.stage_depths):
            raise ConfigError(f"stage_depths must be 4 non-negative ints, got {self.stage_depths}")
        if not set(self.fea_positions) <= {1, 2, 3} or len(set(self.fea_positions)) != len(self.fea_positions):
            raise ConfigError(f"fea_positions must be distinct values from {{1,2,3}}, got {self.fea_positions}")
        if self.attention_block not in ATTENTION_BLOCKS:
            raise ConfigError(f"attention_block must be one of {ATTENTION_BLOCKS}")
        if self.num_classes < 2:
            raise ConfigError("num_classes must be >= 2")
        if self.input_size < 32 or self.input_size % 32:
            raise ConfigError("input_size must be a positive multiple of 32")
        if self.kappa <= 0:
            raise ConfigError("kappa must be positive")
        if self.sa_kernel % 2 == 0:
            raise ConfigError("sa_kernel must be odd")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - names)
        if unknown:
            raise ConfigError(f"unknown model config keys: {unknown}")
        return cls(**data).validate()

    @classmethod
    def toy(cls, **overrides) -> "ModelConfig":
        return cls(**overrides).validate()

    @classmethod
    def full(cls, **overrides) -> "ModelConfig":
        base = dict(
            stage_widths=[80, 160, 320, 640, 1024],
            stage_depths=[2, 2, 2, 2],
            input_size=224,
            preset="full",
        )
        base.update(overrides)
        return cls(**base).validate()


class AGGRNet(Module):
    def __init__(self, cfg: ModelConfig, seed: int = 0, mask_mode: str = "soft"):
        super().__init__()
        cfg.validate()
        if mask_mode not in MASK_MODES:
            raise ConfigError(f"mask_mode must be one of {MASK_MODES}")
        self.cfg = cfg
        w = [int(v) for v in cfg.stage_widths]
        self.stem = ConvBlock(cfg.in_channels, w[0], 3, stride=2, rng=child_rng(seed, "stem"))
        for stage in range(2, 6):
            cin, cout = w[stage - 2], w[stage - 1]
            depth = int(cfg.stage_depths[stage - 2])
            setattr(self, f"stage{stage}_down",
                    ConvBlock(cin, cout, 3, stride=2, rng=child_rng(seed, f"stage{stage}_down")))
            setattr(self, f"stage{stage}_c3k2",
                    C3k2(cout, cout, depth, rng=child_rng(seed, f"stage{stage}_c3k2")))
            setattr(self, f"fea_after_stage{stage}", None)
        for pos in sorted(cfg.fea_positions):
            stage = POSITION_TO_STAGE[pos]
            setattr(self, f"fea_after_stage{stage}",
                    FEA(w[stage - 1], cfg.ca_reduction, cfg.sa_kernel, cfg.kappa, mask_mode,
                        rng=child_rng(seed, f"fea{pos}")))
        self.sppf = SPPF(w[4], w[4], rng=child_rng(seed, "sppf")) if cfg.use_sppf else None
        if cfg.attention_block == "C2PCA":
            self.attn = C2PCA(w[4], cfg.ca_reduction, cfg.ffn_expansion, rng=child_rng(seed, "attn"))
        else:
            self.attn = C2PSA(w[4], cfg.ffn_expansion, rng=child_rng(seed, "attn"))
        self.head = Linear(2 * w[4], cfg.num_classes, rng=child_rng(seed, "head"))

    @property
    def fea_modules(self) -> dict[int, FEA]:
        out = {}
        for pos, stage in POSITION_TO_STAGE.items():
            module = getattr(self, f"fea_after_stage{stage}")
            if module is not None:
                out[pos] = module
        return out

    def set_mask_mode(self, mode: str) -> None:
        if mode not in MASK_MODES:
            raise ConfigError(f"mask_mode must be one of {MASK_MODES}")
        for module in self.fea_modules.values():
            module.mode = mode

    def forward(self, x: Tensor) -> Tensor:
        return forward(self, x)


def forward(model: AGGRNet, batch: Tensor) -> Tensor:
    cfg = model.cfg
    if batch.ndim != 4 or batch.shape[1] != cfg.in_channels:
        raise ShapeError(f"expected (N,{cfg.in_channels},H,W) input, got {batch.shape}")
    if batch.shape[2] != cfg.input_size or batch.shape[3] != cfg.input_size:
        raise ShapeError(f"expected {cfg.input_size}x{cfg.input_size} images, got {batch.shape[2:]}")
    x = model.stem(batch)
    for stage in range(2, 6):
        x = getattr(model, f"stage{stage}_down")(x)
        x = getattr(model, f"stage{stage}_c3k2")(x)
        fea = getattr(model, f"fea_after_stage{stage}")
        if fea is not None:
            x = fea(x)
    if model.sppf is not None:
        x = model.sppf(x)
    x = model.attn(x)
    pooled = global_avg_pool(x)
    return model.head(reshape(pooled, pooled.shape[:2]))


def build_model(cfg: ModelConfig, seed: int = 0, mask_mode: str = "soft") -> AGGRNet:
    return AGGRNet(cfg, seed=seed, mask_mode=mask_mode)


def parameter_manifest(model: Module) -> list[tuple[str, tuple[int, ...], int]]:
    return [(name, p.shape, p.size) for name, p in model.named_parameters()]


# Ablation grid: (label, overrides applied to the base config)
ABLATION_VARIANTS: list[tuple[str, dict]] = [
    ("YOLOv11 classification backbone with C2PSA",
     dict(attention_block="C2PSA", fea_positions=[], use_sppf=False)),
    ("YOLOv11 classification backbone with C2PCA",
     dict(attention_block="C2PCA", fea_positions=[], use_sppf=False)),
    ("YOLOv11 + C2PCA + FEA@1",
     dict(attention_block="C2PCA", fea_positions=[1], use_sppf=False)),
    ("YOLOv11 + C2PCA + FEA@1,2",
     dict(attention_block="C2PCA", fea_positions=[1, 2], use_sppf=False)),
    ("YOLOv11 + C2PCA + FEA@1,2,3",
     dict(attention_block="C2PCA", fea_positions=[1, 2, 3], use_sppf=False)),
    ("AGGRNet/Ours (YOLOv11 + C2PCA + FEA@1,2,3 + SPPF)",
     dict(attention_block="C2PCA", fea_positions=[1, 2, 3], use_sppf=True)),
]


def ablation_configs(base: ModelConfig) -> list[tuple[str, ModelConfig]]:
    return [(label, dataclasses.replace(base, **over).validate()) for label, over in ABLATION_VARIANTS]
