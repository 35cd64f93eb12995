"""Feature extraction: a small residual encoder plus pyramid fusion.

Produces four feature maps at {1/4, 1/8, 1/16, 1/32} of the input
resolution, all with C_fpn channels. A deep pretrained encoder can be
plugged in through the ``backbone`` argument of :class:`PyramidEncoder`:
any callable mapping an image batch to four feature maps at those strides
works.
"""

from dataclasses import dataclass

import torch.nn as nn

from .equirect_ops import RingConv2d, upsample

STAGE_WIDTHS = (32, 64, 128, 256)


@dataclass
class EncoderConfig:
    variant: str = "small-residual-unet"
    c_fpn: int = 64
    input_channels: int = 3

    def __post_init__(self):
        if self.c_fpn <= 0:
            raise ValueError("c_fpn must be positive")


class ResidualStage(nn.Module):
    """Stride-2 residual block: two ring convs plus a strided 1x1 skip."""

    def __init__(self, in_ch, out_ch):
        super().__init__()
        self.conv1 = RingConv2d(in_ch, out_ch, 3, stride=2, bias=False)
        self.bn1 = nn.BatchNorm2d(out_ch)
        self.conv2 = RingConv2d(out_ch, out_ch, 3, bias=False)
        self.bn2 = nn.BatchNorm2d(out_ch)
        self.skip = nn.Sequential(
            nn.Conv2d(in_ch, out_ch, 1, stride=2, bias=False),
            nn.BatchNorm2d(out_ch),
        )
        self.relu = nn.ReLU(inplace=True)

    def forward(self, x):
        out = self.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return self.relu(out + self.skip(x))


class SmallResidualBackbone(nn.Module):
    """Stem at stride 2 followed by four stride-2 residual stages, yielding
    features at strides {4, 8, 16, 32}."""

    def __init__(self, in_channels=3):
        super().__init__()
        self.stem = nn.Sequential(
            RingConv2d(in_channels, STAGE_WIDTHS[0], 3, stride=2, bias=False),
            nn.BatchNorm2d(STAGE_WIDTHS[0]),
            nn.ReLU(inplace=True),
        )
        widths = (STAGE_WIDTHS[0],) + STAGE_WIDTHS
        self.stages = nn.ModuleList(
            ResidualStage(widths[i], widths[i + 1]) for i in range(4))
        self.out_channels = list(STAGE_WIDTHS)

    def forward(self, x):
        x = self.stem(x)
        feats = []
        for stage in self.stages:
            x = stage(x)
            feats.append(x)
        return feats


class PyramidEncoder(nn.Module):
    """Backbone + top-down pyramid fusion to a shared channel width."""

    def __init__(self, config, backbone=None):
        super().__init__()
        self.config = config
        if backbone is None:
            backbone = SmallResidualBackbone(config.input_channels)
        self.backbone = backbone
        self.laterals = nn.ModuleList(
            nn.Conv2d(c, config.c_fpn, 1) for c in backbone.out_channels)
        # post-fusion 3x3 smoothing, one per level
        self.smooth = nn.ModuleList(
            RingConv2d(config.c_fpn, config.c_fpn, 3) for _ in range(4))

    def forward(self, image):
        h, w = image.shape[-2:]
        if h % 32 != 0:
            raise ValueError(f"input height must be divisible by 32, got {h}")
        if w != 2 * h:
            raise ValueError(f"W must equal 2H, got ({h},{w})")
        c1, c2, c3, c4 = self.backbone(image)
        p4 = self.laterals[3](c4)
        p3 = self.laterals[2](c3) + upsample(p4, c3.shape[-2:], mode="nearest")
        p2 = self.laterals[1](c2) + upsample(p3, c2.shape[-2:], mode="nearest")
        p1 = self.laterals[0](c1) + upsample(p2, c1.shape[-2:], mode="nearest")
        return [s(p) for s, p in zip(self.smooth, (p1, p2, p3, p4))]


def count_parameters(module):
    return sum(p.numel() for p in module.parameters())
