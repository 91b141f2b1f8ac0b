"""Full-network assembly: backbone stub, fusion neck, head stub.

The backbone is a stem plus four stages (taps P2..P5 at strides 4/8/16/32),
each a stride-2 transition conv followed by a RepHELAN block whose depthwise
kernel follows the global schedule (3/5/7/9 by stage; 5/7/9 by neck level).
The head is a per-level stub: projection, two reparameterized depthwise
units, and a 1x1 output conv. Configs round-trip through strict JSON.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

import numpy as np

from .blocks import BottleneckConfig, HELANConfig, RepHELAN
from .errors import ConfigError, ShapeError
from .mafpn import MAFPN, NeckConfig
from .modules import BatchNorm2d, Conv2d, ConvBN, Module, ModuleList
from .repconv import RepHDWConv
from .tensor import Tensor


@dataclass
class ModelConfig:
    stem_width: int = 16
    stage_widths: list[int] = field(default_factory=lambda: [32, 64, 128, 256])
    stage_depths: list[int] = field(default_factory=lambda: [2, 4, 4, 2])
    backbone_kernels: list[int] = field(default_factory=lambda: [3, 5, 7, 9])
    expansion: float = 2.0
    use_elan: bool = True
    use_rep: bool = True
    use_large: bool = True
    neck: NeckConfig = field(default_factory=NeckConfig)
    head_width: int = 64
    head_out_channels: int = 64
    in_channels: int = 3
    seed: int = 0

    def __post_init__(self):
        if len(self.stage_widths) != 4:
            raise ConfigError(
                f"ModelConfig.stage_widths: need exactly 4 stages, got {len(self.stage_widths)}"
            )
        if len(self.stage_depths) != 4:
            raise ConfigError(
                f"ModelConfig.stage_depths: need exactly 4 stages, got {len(self.stage_depths)}"
            )
        if len(self.backbone_kernels) != 4:
            raise ConfigError(
                f"ModelConfig.backbone_kernels: need exactly 4 kernels, got {self.backbone_kernels}"
            )
        ks = self.backbone_kernels
        if any(k % 2 == 0 for k in ks) or sorted(ks) != ks or len(set(ks)) != 4:
            raise ConfigError(
                f"ModelConfig.backbone_kernels: must be strictly increasing odd, got {ks}"
            )
        for name in ("stem_width", "head_width", "head_out_channels", "in_channels"):
            if getattr(self, name) < 1:
                raise ConfigError(f"ModelConfig.{name}: must be positive")
        if any(w < 2 or w % 2 for w in self.stage_widths):
            raise ConfigError(
                f"ModelConfig.stage_widths: must be positive even, got {self.stage_widths}"
            )
        if any(d < 1 for d in self.stage_depths):
            raise ConfigError(
                f"ModelConfig.stage_depths: must be >= 1, got {self.stage_depths}"
            )


def config_to_dict(cfg: ModelConfig) -> dict:
    d = dataclasses.asdict(cfg)
    return d


def config_from_dict(d: dict) -> ModelConfig:
    if not isinstance(d, dict):
        raise ConfigError("model config: top-level JSON value must be an object")
    known = {f.name for f in dataclasses.fields(ModelConfig)}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"model config: unknown keys {sorted(unknown)}")
    d = dict(d)
    if "neck" in d:
        nd = d["neck"]
        if not isinstance(nd, dict):
            raise ConfigError("model config: 'neck' must be an object")
        nknown = {f.name for f in dataclasses.fields(NeckConfig)}
        nunknown = set(nd) - nknown
        if nunknown:
            raise ConfigError(f"model config: unknown neck keys {sorted(nunknown)}")
        d["neck"] = NeckConfig(**nd)
    return ModelConfig(**d)


def save_config(cfg: ModelConfig, path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(config_to_dict(cfg), f, indent=2, sort_keys=True)
        f.write("\n")


def load_config(path: str) -> ModelConfig:
    with open(path, "r", encoding="utf-8") as f:
        try:
            d = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"model config: invalid JSON at {path}: {e}") from e
    return config_from_dict(d)


class Stage(Module):
    """Stride-2 transition conv followed by a RepHELAN block."""

    def __init__(self, in_ch, width, depth, kernel, cfg: ModelConfig, rng, dtype):
        super().__init__()
        self.down = ConvBN(in_ch, width, 3, stride=2, rng=rng, dtype=dtype)
        bcfg = BottleneckConfig(
            channels=width // 2,
            expansion=cfg.expansion,
            kernel=kernel,
            use_rep=cfg.use_rep,
            use_large=cfg.use_large,
        )
        hcfg = HELANConfig(
            in_channels=width,
            out_channels=width,
            hidden=width // 2,
            n_bottlenecks=depth,
            bottleneck=bcfg,
            use_elan=cfg.use_elan,
        )
        self.block = RepHELAN(hcfg, rng=rng, dtype=dtype)

    def forward(self, x):
        return self.block(self.down(x))


class Backbone(Module):
    def __init__(self, cfg: ModelConfig, rng, dtype):
        super().__init__()
        self.stem = ConvBN(cfg.in_channels, cfg.stem_width, 3, stride=2, rng=rng, dtype=dtype)
        stages = []
        prev = cfg.stem_width
        for width, depth, kernel in zip(
            cfg.stage_widths, cfg.stage_depths, cfg.backbone_kernels
        ):
            stages.append(Stage(prev, width, depth, kernel, cfg, rng, dtype))
            prev = width
        self.stages = ModuleList(stages)

    def forward(self, x):
        taps = {}
        y = self.stem(x)
        taps["stem"] = y
        for i, stage in enumerate(self.stages):
            y = stage(y)
            taps[f"P{i + 2}"] = y
        return taps


class HeadBranch(Module):
    """Per-level stub: 1x1 projection, two RepHDW units, 1x1 output conv."""

    def __init__(self, in_ch, width, out_ch, use_rep, rng, dtype):
        super().__init__()
        self.proj = ConvBN(in_ch, width, 1, rng=rng, dtype=dtype)
        self.dw1 = RepHDWConv(width, 7, small_kernels=None if use_rep else [], rng=rng, dtype=dtype)
        self.dw2 = RepHDWConv(width, 7, small_kernels=None if use_rep else [], rng=rng, dtype=dtype)
        # prediction conv: small init keeps raw output maps near zero
        self.out = Conv2d(width, out_ch, 1, bias=True, rng=rng, dtype=dtype, init_std=0.01)

    def forward(self, x):
        from . import ops

        y = self.proj(x)
        y = ops.silu(self.dw1(y))
        y = ops.silu(self.dw2(y))
        return self.out(y)


class Model(Module):
    def __init__(self, cfg: ModelConfig, dtype=np.float32):
        super().__init__()
        rng = np.random.default_rng(cfg.seed)
        self.cfg = cfg
        self.backbone = Backbone(cfg, rng, dtype)
        self.neck = MAFPN(cfg.stage_widths, cfg.neck, rng=rng, dtype=dtype)
        self.heads = ModuleList(
            HeadBranch(w, cfg.head_width, cfg.head_out_channels, cfg.use_rep, rng, dtype)
            for w in cfg.neck.widths
        )

    def forward(self, x: Tensor) -> dict[str, Tensor]:
        outs, _ = self.forward_taps(x)
        return outs

    def forward_taps(self, x: Tensor):
        if x.ndim != 4 or x.shape[1] != self.cfg.in_channels:
            raise ShapeError(
                f"Model: input must be (B,{self.cfg.in_channels},H,W), got {x.shape}"
            )
        h, w = x.shape[2], x.shape[3]
        if h % 32 or w % 32:
            raise ShapeError(f"Model: input spatial dims {h}x{w} must be divisible by 32")
        taps = self.backbone(x)
        neck_outs, neck_taps = self.neck.forward_taps(taps)
        taps.update(neck_taps)
        taps.update(neck_outs)
        outs = {}
        for i, head in enumerate(self.heads):
            level = i + 3
            outs[f"out{level}"] = head(neck_outs[f"N{level}"])
        taps.update(outs)
        return outs, taps


def build_model(cfg: ModelConfig, dtype=np.float32) -> Model:
    """Deterministically build a model; identical cfg.seed gives identical weights."""
    return Model(cfg, dtype=dtype)


def calibrate_bn_stats(
    module: Module,
    rng: np.random.Generator,
    input_shape: tuple = (1, 3, 320, 320),
    batches: int = 4,
) -> None:
    """Estimate batch-norm running statistics from train-mode noise passes.

    A freshly initialized network carries (0,1) running statistics that bear
    no relation to its actual activation distribution, so inference-mode
    activations grow without bound through depth; folding is defined for
    finalized statistics. The momentum schedule 1, 1/2, ..., 1/n leaves each
    running buffer holding the plain average of the batch statistics.

    Statistics are resolution sensitive (border padding dominates small deep
    maps), so calibrate at the resolution you intend to evaluate at.
    """
    from .tensor import no_grad

    bns = [m for m in module.modules() if isinstance(m, BatchNorm2d)]
    saved_momentum = [bn.momentum for bn in bns]
    was_training = module.training
    module.train()
    dtype = next(module.parameters()).dtype
    try:
        with no_grad():
            for i in range(batches):
                for bn in bns:
                    bn.momentum = 1.0 / (i + 1)
                x = Tensor(rng.standard_normal(input_shape).astype(dtype))
                module(x)
    finally:
        for bn, m in zip(bns, saved_momentum):
            bn.momentum = m
        if not was_training:
            module.eval()


def fuse_model(model: Model) -> int:
    """Fuse every reparameterized depthwise unit; returns the unit count."""
    n = 0
    for m in model.modules():
        if isinstance(m, RepHDWConv):
            m.fuse()
            n += 1
    return n


def rep_units(model: Module) -> list[tuple[str, RepHDWConv]]:
    return [(name, m) for name, m in model.named_modules() if isinstance(m, RepHDWConv)]


def ghks_kernels(model: Model) -> dict[str, list[int]]:
    """Depthwise kernel schedule actually present in the built model."""
    backbone = [stage.block.cfg.bottleneck.effective_kernel for stage in model.backbone.stages]
    neck_blocks = [model.neck.td3, model.neck.td4, model.neck.bu4, model.neck.bu5]
    if model.cfg.neck.enable_aaf:
        neck_blocks.append(model.neck.bu3)
    neck = sorted({b.cfg.bottleneck.effective_kernel for b in neck_blocks})
    return {"backbone": backbone, "neck": neck}


def nano_config(seed: int = 0) -> ModelConfig:
    """Default full-scale configuration (the calibration target)."""
    return ModelConfig(seed=seed)


def toy_config(seed: int = 0) -> ModelConfig:
    """Reduced-width configuration for gradient-flow and training tests."""
    return ModelConfig(
        stem_width=8,
        stage_widths=[8, 16, 24, 32],
        stage_depths=[1, 1, 1, 1],
        neck=NeckConfig(widths=[16, 24, 32], depth=1),
        head_width=16,
        head_out_channels=8,
        seed=seed,
    )
