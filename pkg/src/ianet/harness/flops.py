"""Analytic multiply counts for the toy backbone, ResNet-50 geometry and IA blocks."""

from __future__ import annotations

from dataclasses import dataclass, field

from ..block import IAConfig, ia_block_flops, sia_flops
from ..errors import ConfigurationError
from ..model import STAGES, BackboneConfig

RESNET50_PRESET = "resnet50@256x128"


@dataclass
class FlopReport:
    backbone: int
    ia: int
    layers: list = field(default_factory=list)  # (name, multiplies)

    @property
    def overhead(self) -> float:
        return self.ia / self.backbone

    def to_tsv(self) -> str:
        rows = ["layer\tmultiplies"] + [f"{name}\t{n}" for name, n in self.layers]
        rows += [
            f"backbone_total\t{self.backbone}",
            f"ia_total\t{self.ia}",
            f"relative_overhead\t{self.overhead:.6%}",
        ]
        return "\n".join(rows) + "\n"


def conv_mults(cin: int, cout: int, k: int, Ho: int, Wo: int) -> int:
    return cout * cin * k * k * Ho * Wo


def toy_backbone_layers(cfg: BackboneConfig) -> list[tuple[str, int]]:
    _, H, W = cfg.input_shape
    layers = [("stem", conv_mults(cfg.input_shape[0], cfg.widths[0], 3, H, W))]
    prev = cfg.widths[0]
    for s, width, (h, w) in zip(STAGES, cfg.widths, cfg.stage_grids()):
        layers.append((f"stage{s}", conv_mults(prev, width, 3, h, w)))
        prev = width
    layers.append(("classifier", cfg.embed_dim * cfg.num_ids))
    return layers


def _out(n: int, k: int, s: int, p: int) -> int:
    return (n + 2 * p - k) // s + 1


def resnet50_layers(
    input_hw=(256, 128), remove_last_stride: bool = True, num_classes: int = 0
) -> tuple[list[tuple[str, int]], dict]:
    """Per-layer multiplies of ResNet-50 (v1.5 strides) and each stage's output geometry.

    Returns the layer list and ``{stage: (channels, H, W)}``.
    """
    H, W = input_hw
    layers = []
    H, W = _out(H, 7, 2, 3), _out(W, 7, 2, 3)
    layers.append(("conv1", conv_mults(3, 64, 7, H, W)))
    H, W = _out(H, 3, 2, 1), _out(W, 3, 2, 1)
    cin = 64
    geometry = {}
    blocks = (3, 4, 6, 3)
    mids = (64, 128, 256, 512)
    for s, (n, mid) in enumerate(zip(blocks, mids), 1):
        cout = mid * 4
        stride = 1 if s == 1 or (s == 4 and remove_last_stride) else 2
        for b in range(n):
            st = stride if b == 0 else 1
            Ho, Wo = _out(H, 3, st, 1), _out(W, 3, st, 1)
            name = f"stage{s}.block{b}"
            layers.append((name + ".conv1", conv_mults(cin, mid, 1, H, W)))
            layers.append((name + ".conv2", conv_mults(mid, mid, 3, Ho, Wo)))
            layers.append((name + ".conv3", conv_mults(mid, cout, 1, Ho, Wo)))
            if b == 0:
                layers.append((name + ".downsample", conv_mults(cin, cout, 1, Ho, Wo)))
            H, W, cin = Ho, Wo, cout
        geometry[s] = (cout, H, W)
    if num_classes:
        layers.append(("fc", cin * num_classes))
    return layers, geometry


def flop_report(cfg: BackboneConfig | str, ia: IAConfig | None = None, placement=None, sia_only: bool = False) -> FlopReport:
    """Multiply counts of a backbone plus IA blocks at the given stage outputs.

    ``cfg`` is a :class:`BackboneConfig` or the preset name ``resnet50@256x128``.
    ``placement`` defaults to ``cfg.ia_placement`` (no blocks for the preset).
    With ``sia_only`` only the spatial module of each block is counted.
    """
    if isinstance(cfg, str):
        if cfg != RESNET50_PRESET:
            raise ConfigurationError(f"unknown preset {cfg!r}; available: {RESNET50_PRESET}")
        layers, geometry = resnet50_layers()
        placement = tuple(placement or ())
        ia = ia or IAConfig()
    else:
        layers = toy_backbone_layers(cfg)
        geometry = {
            s: (w, h, ww) for s, w, (h, ww) in zip(STAGES, cfg.widths, cfg.stage_grids())
        }
        placement = tuple(cfg.ia_placement if placement is None else placement)
        ia = ia or cfg.ia
    ia_layers = []
    for s in placement:
        if s not in geometry:
            raise ConfigurationError(f"no stage {s} in backbone")
        C, H, W = geometry[s]
        n = sia_flops(C, H, W, ia.patch_sizes) if sia_only else ia_block_flops(C, H, W, ia)
        ia_layers.append((f"ia{s}", n))
    backbone = sum(n for _, n in layers)
    return FlopReport(backbone, sum(n for _, n in ia_layers), layers + ia_layers)
