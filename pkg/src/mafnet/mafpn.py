"""Two-pathway fusion neck over backbone taps P2..P5.

Pathway 1 (top-down) uses superficial assisted fusion: every level merges a
downsampled shallower backbone tap (the assist lane, projected to a fraction
of the level width), the same-level tap and the upsampled deeper neck lane.
Pathway 2 (bottom-up) uses advanced assisted fusion: equal-width lanes from
the first pathway's neighbours, the running second-pathway lane and an
upsampled deeper lane. Each fusion node feeds a RepHELAN block; the three
second-pathway outputs (strides 8/16/32) are the neck outputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ops
from .blocks import BottleneckConfig, HELANConfig, RepHELAN
from .errors import ConfigError, ShapeError
from .modules import BatchNorm2d, Conv2d, ConvBN, Module
from .tensor import Tensor


@dataclass
class NeckConfig:
    widths: list[int] = field(default_factory=lambda: [96, 192, 320])
    kernels: list[int] = field(default_factory=lambda: [5, 7, 9])
    saf_ratio: float = 0.5
    enable_saf: bool = True
    enable_aaf: bool = True
    depth: int = 2
    expansion: float = 2.0
    use_elan: bool = True
    use_rep: bool = True
    use_large: bool = True

    def __post_init__(self):
        if len(self.widths) != 3 or any(w < 1 for w in self.widths):
            raise ConfigError(f"NeckConfig: widths must be three positive ints, got {self.widths}")
        if len(self.kernels) != 3:
            raise ConfigError(f"NeckConfig: kernels must list three sizes, got {self.kernels}")
        if not 0.0 < self.saf_ratio <= 1.0:
            raise ConfigError(f"NeckConfig: saf_ratio must be in (0,1], got {self.saf_ratio}")


def _check_spatial(level: str, name: str, got, want) -> None:
    if got != want:
        raise ShapeError(
            f"{level}: lane {name} has spatial dims {got}, expected {want}"
        )


class DownLane(Module):
    """3x3 stride-2 conv + BN, then a 1x1 width-control conv, then SiLU."""

    def __init__(self, in_channels, out_channels, rng=None, dtype=np.float32):
        super().__init__()
        self.down = Conv2d(in_channels, in_channels, 3, stride=2, rng=rng, dtype=dtype)
        self.bn = BatchNorm2d(in_channels, dtype=dtype)
        self.proj = Conv2d(in_channels, out_channels, 1, bias=True, rng=rng, dtype=dtype)

    def forward(self, x):
        return ops.silu(self.proj(self.bn(self.down(x))))


class SAFFuse(Module):
    """Superficial assisted fusion at one level.

    concat(assist(shallow), same, upsample(deep)) where the assist lane is
    Down -> 1x1 projected to ratio * same-level width. With the assist lane
    disabled the node degenerates to concat(same, up).
    """

    def __init__(
        self,
        shallow_ch: int,
        same_ch: int,
        deep_ch: int,
        ratio: float = 0.5,
        enable_assist: bool = True,
        level: str = "",
        rng=None,
        dtype=np.float32,
    ):
        super().__init__()
        self.level = level or "saf"
        self.enable_assist = enable_assist
        self.assist_ch = int(round(ratio * same_ch)) if enable_assist else 0
        if enable_assist:
            self.assist = DownLane(shallow_ch, self.assist_ch, rng=rng, dtype=dtype)
        self.out_channels = self.assist_ch + same_ch + deep_ch

    def forward(self, shallow: Tensor | None, same: Tensor, deep: Tensor) -> Tensor:
        hs, ws = same.shape[2], same.shape[3]
        _check_spatial(self.level, "deep", deep.shape[2:], (hs // 2, ws // 2))
        lanes = []
        if self.enable_assist:
            _check_spatial(self.level, "shallow", shallow.shape[2:], (2 * hs, 2 * ws))
            lanes.append(self.assist(shallow))
        lanes.append(same)
        lanes.append(ops.upsample_nearest2x(deep))
        return ops.concat_channels(lanes)


class AAFFuse(Module):
    """Advanced assisted fusion: every enabled lane is projected to `width`.

    Lane order is (backbone assist, first-pathway down, second-pathway down,
    same, projected upsample). Any lane but `same` can be absent; the same
    lane must already carry `width` channels. The assist lane only exists at
    the lowest level, where no shallower neck lanes are available.
    """

    def __init__(
        self,
        width: int,
        assist_ch: int | None = None,
        p1_prev_ch: int | None = None,
        p2_prev_ch: int | None = None,
        deep_ch: int | None = None,
        level: str = "",
        rng=None,
        dtype=np.float32,
    ):
        super().__init__()
        self.level = level or "aaf"
        self.width = width
        self.has_assist = assist_ch is not None
        self.has_p1_down = p1_prev_ch is not None
        self.has_p2_down = p2_prev_ch is not None
        self.has_up = deep_ch is not None
        if self.has_assist:
            self.assist = DownLane(assist_ch, width, rng=rng, dtype=dtype)
        if self.has_p1_down:
            self.p1_down = DownLane(p1_prev_ch, width, rng=rng, dtype=dtype)
        if self.has_p2_down:
            self.p2_down = DownLane(p2_prev_ch, width, rng=rng, dtype=dtype)
        if self.has_up:
            self.up_proj = Conv2d(deep_ch, width, 1, bias=True, rng=rng, dtype=dtype)
        self.out_channels = width * (
            1
            + int(self.has_assist)
            + int(self.has_p1_down)
            + int(self.has_p2_down)
            + int(self.has_up)
        )

    def forward(
        self,
        same: Tensor,
        assist: Tensor | None = None,
        p1_prev: Tensor | None = None,
        p2_prev: Tensor | None = None,
        deep: Tensor | None = None,
    ) -> Tensor:
        hs, ws = same.shape[2], same.shape[3]
        if same.shape[1] != self.width:
            raise ShapeError(
                f"{self.level}: same lane has {same.shape[1]} channels, expected {self.width}"
            )
        lanes = []
        if self.has_assist:
            _check_spatial(self.level, "assist", assist.shape[2:], (2 * hs, 2 * ws))
            lanes.append(self.assist(assist))
        if self.has_p1_down:
            _check_spatial(self.level, "p1_prev", p1_prev.shape[2:], (2 * hs, 2 * ws))
            lanes.append(self.p1_down(p1_prev))
        if self.has_p2_down:
            _check_spatial(self.level, "p2_prev", p2_prev.shape[2:], (2 * hs, 2 * ws))
            lanes.append(self.p2_down(p2_prev))
        lanes.append(same)
        if self.has_up:
            _check_spatial(self.level, "deep", deep.shape[2:], (hs // 2, ws // 2))
            lanes.append(self.up_proj(ops.upsample_nearest2x(deep)))
        return ops.concat_channels(lanes)


class MAFPN(Module):
    """The full neck: backbone taps (P2,P3,P4,P5) -> outputs (N3,N4,N5)."""

    def __init__(
        self,
        tap_channels: list[int],
        cfg: NeckConfig,
        rng: np.random.Generator | None = None,
        dtype=np.float32,
    ):
        super().__init__()
        if len(tap_channels) != 4:
            raise ConfigError(f"MAFPN: need 4 tap widths (P2..P5), got {tap_channels}")
        rng = rng or np.random.default_rng(0)
        self.cfg = cfg
        c2, c3, c4, c5 = tap_channels
        w3, w4, w5 = cfg.widths
        k3, k4, k5 = cfg.kernels
        saf = cfg.enable_saf
        aaf = cfg.enable_aaf

        def helan(in_ch, out_ch, kernel):
            bcfg = BottleneckConfig(
                channels=out_ch // 2,
                expansion=cfg.expansion,
                kernel=kernel,
                use_rep=cfg.use_rep,
                use_large=cfg.use_large,
            )
            hcfg = HELANConfig(
                in_channels=in_ch,
                out_channels=out_ch,
                hidden=out_ch // 2,
                n_bottlenecks=cfg.depth,
                bottleneck=bcfg,
                use_elan=cfg.use_elan,
            )
            return RepHELAN(hcfg, rng=rng, dtype=dtype)

        # Pathway 1: top-down with superficial assisted fusion.
        self.proj5 = ConvBN(c5, w5, 1, rng=rng, dtype=dtype)
        self.saf4 = SAFFuse(c3, c4, w5, cfg.saf_ratio, saf, "P'4", rng=rng, dtype=dtype)
        self.td4 = helan(self.saf4.out_channels, w4, k4)
        self.saf3 = SAFFuse(c2, c3, w4, cfg.saf_ratio, saf, "P'3", rng=rng, dtype=dtype)
        self.td3 = helan(self.saf3.out_channels, w3, k3)

        # Pathway 2: bottom-up with advanced assisted fusion. The lowest
        # level has no shallower neck lane; with AAF off it is an alias of
        # the first pathway and the chain-down lanes alone feed the blocks.
        if aaf:
            self.aaf3 = AAFFuse(
                w3,
                assist_ch=c2 if saf else None,
                deep_ch=w4,
                level="P''3",
                rng=rng,
                dtype=dtype,
            )
            self.bu3 = helan(self.aaf3.out_channels, w3, k3)
        self.aaf4 = AAFFuse(
            w4,
            p1_prev_ch=w3 if aaf else None,
            p2_prev_ch=w3,
            deep_ch=w5 if aaf else None,
            level="P''4",
            rng=rng,
            dtype=dtype,
        )
        self.bu4 = helan(self.aaf4.out_channels, w4, k4)
        self.aaf5 = AAFFuse(
            w5,
            p1_prev_ch=w4 if aaf else None,
            p2_prev_ch=w4,
            level="P''5",
            rng=rng,
            dtype=dtype,
        )
        self.bu5 = helan(self.aaf5.out_channels, w5, k5)

    def forward(self, taps: dict[str, Tensor]) -> dict[str, Tensor]:
        outs, _ = self.forward_taps(taps)
        return outs

    def forward_taps(self, taps: dict[str, Tensor]):
        cfg = self.cfg
        p2, p3, p4, p5 = taps["P2"], taps["P3"], taps["P4"], taps["P5"]
        saf, aaf = cfg.enable_saf, cfg.enable_aaf

        t5 = self.proj5(p5)
        t4 = self.td4(self.saf4(p3 if saf else None, p4, t5))
        t3 = self.td3(self.saf3(p2 if saf else None, p3, t4))

        if aaf:
            b3 = self.bu3(self.aaf3(t3, assist=p2 if saf else None, deep=t4))
        else:
            b3 = t3
        b4 = self.bu4(
            self.aaf4(t4, p1_prev=t3 if aaf else None, p2_prev=b3, deep=t5 if aaf else None)
        )
        b5 = self.bu5(self.aaf5(t5, p1_prev=t4 if aaf else None, p2_prev=b4))

        neck_taps = {"P'5": t5, "P'4": t4, "P'3": t3, "P''3": b3, "P''4": b4, "P''5": b5}
        return {"N3": b3, "N4": b4, "N5": b5}, neck_taps

    # -- wiring introspection --------------------------------------------------
    def wiring_edges(self) -> list[str]:
        """Deterministic edge list, one `src -> dst [kind]` line per lane."""
        saf, aaf = self.cfg.enable_saf, self.cfg.enable_aaf
        edges = [("P5", "P'5", "project")]
        if saf:
            edges.append(("P3", "P'4", "assist-down"))
        edges += [("P4", "P'4", "same"), ("P'5", "P'4", "up")]
        if saf:
            edges.append(("P2", "P'3", "assist-down"))
        edges += [("P3", "P'3", "same"), ("P'4", "P'3", "up")]
        if aaf:
            if saf:
                edges.append(("P2", "P''3", "assist-down"))
            edges += [("P'3", "P''3", "same"), ("P'4", "P''3", "up-project")]
        else:
            edges.append(("P'3", "P''3", "alias"))
        if aaf:
            edges.append(("P'3", "P''4", "cross-down"))
        edges += [("P''3", "P''4", "chain-down"), ("P'4", "P''4", "same")]
        if aaf:
            edges.append(("P'5", "P''4", "up-project"))
        if aaf:
            edges.append(("P'4", "P''5", "cross-down"))
        edges += [("P''4", "P''5", "chain-down"), ("P'5", "P''5", "same")]
        edges += [("P''3", "N3", "output"), ("P''4", "N4", "output"), ("P''5", "N5", "output")]
        return [f"{s} -> {d} [{k}]" for s, d, k in edges]


def backbone_lineage(edges: list[str]) -> dict[str, set[str]]:
    """Taint-propagate backbone taps through the wiring graph.

    Returns, for each node, the set of backbone levels (P2..P5) whose
    information can reach it.
    """
    parents: dict[str, list[str]] = {}
    for e in edges:
        src, rest = e.split(" -> ")
        dst = rest.split(" [")[0]
        parents.setdefault(dst, []).append(src)
    taps = {"P2", "P3", "P4", "P5"}

    def lineage(node: str, seen: frozenset = frozenset()) -> set[str]:
        if node in taps:
            return {node}
        out: set[str] = set()
        for p in parents.get(node, []):
            if p not in seen:
                out |= lineage(p, seen | {node})
        return out

    return {n: lineage(n) for n in parents}
