"""Bi-directional compression: Mix-MLP positional layer, pyramid pooling
compression of each pyramid level to a 1D row/column, and multi-level
alignment into the horizontal and vertical sequences.
"""

from dataclasses import dataclass

import torch
import torch.nn as nn

from .equirect_ops import upsample, window_avg_pool

HORIZONTAL = "horizontal"
VERTICAL = "vertical"


@dataclass
class DirectionalSequence:
    direction: str
    data: torch.Tensor  # (..., 1, W') for horizontal, (..., H', 1) for vertical

    def __post_init__(self):
        if self.direction not in (HORIZONTAL, VERTICAL):
            raise ValueError(f"unknown direction {self.direction!r}")
        collapsed = self.data.shape[-2] if self.direction == HORIZONTAL else self.data.shape[-1]
        if collapsed != 1:
            raise ValueError(f"collapsed axis must have extent 1, got {collapsed}")

    @property
    def extent(self):
        """Length of the kept axis."""
        return self.data.shape[-1] if self.direction == HORIZONTAL else self.data.shape[-2]


def ppc_levels(stage, direction):
    """Pooling bin counts for a pyramid stage (1-based) and direction."""
    if stage not in (1, 2, 3, 4):
        raise ValueError(f"stage must be in 1..4, got {stage}")
    j_max = 4 - stage if direction == HORIZONTAL else 5 - stage
    return [2 ** j for j in range(j_max + 1)]


class MixMlp(nn.Module):
    """Expand, depth-wise 3x3 with zero padding (the positional carrier),
    GELU, project back, residual add."""

    def __init__(self, channels, expansion=4):
        super().__init__()
        if expansion < 1:
            raise ValueError("expansion must be >= 1")
        mid = channels * expansion
        self.fc1 = nn.Conv2d(channels, mid, 1)
        self.dwconv = nn.Conv2d(mid, mid, 3, padding=1, groups=mid)
        self.act = nn.GELU()
        self.fc2 = nn.Conv2d(mid, channels, 1)

    def forward(self, x):
        return self.fc2(self.act(self.dwconv(self.fc1(x)))) + x


class PpcCompress(nn.Module):
    """Collapse one spatial axis of a pyramid level to extent 1.

    For each pooling level with bin count b the feature is average-pooled
    to b bins along the collapsed axis (keeping the other axis intact),
    then a valid convolution with kernel extent b collapses those bins.
    The per-level rows are concatenated on channels and fused by a
    1x1 conv + BN + ReLU down to out_channels.
    """

    def __init__(self, stage, direction, in_channels, out_channels):
        super().__init__()
        self.stage = stage
        self.direction = direction
        self.levels = ppc_levels(stage, direction)
        self.collapse = nn.ModuleList()
        for b in self.levels:
            k = (b, 1) if direction == HORIZONTAL else (1, b)
            self.collapse.append(nn.Conv2d(in_channels, in_channels, k))
        self.fuse = nn.Sequential(
            nn.Conv2d(in_channels * len(self.levels), out_channels, 1),
            nn.BatchNorm2d(out_channels),
            nn.ReLU(inplace=True),
        )

    def forward(self, feature):
        h, w = feature.shape[-2:]
        rows = []
        for b, conv in zip(self.levels, self.collapse):
            if self.direction == HORIZONTAL:
                if b > h:
                    raise ValueError(f"bin count {b} exceeds height {h}")
                pooled = window_avg_pool(feature, (b, w))
            else:
                if b > w:
                    raise ValueError(f"bin count {b} exceeds width {w}")
                pooled = window_avg_pool(feature, (h, b))
            rows.append(conv(pooled))
        out = self.fuse(torch.cat(rows, dim=-3))
        return DirectionalSequence(self.direction, out)


def align_concat(reps):
    """Upsample sequences to the first one's extent (bilinear along the kept
    axis) and concatenate on channels."""
    if len(reps) != 4:
        raise ValueError(f"expected 4 sequences, got {len(reps)}")
    direction = reps[0].direction
    if any(r.direction != direction for r in reps):
        raise ValueError("direction mismatch among sequences")
    target = reps[0].extent
    parts = []
    for r in reps:
        size = (1, target) if direction == HORIZONTAL else (target, 1)
        parts.append(upsample(r.data, size, mode="bilinear"))
    return DirectionalSequence(direction, torch.cat(parts, dim=-3))


class BiCompress(nn.Module):
    """Per-stage Mix-MLP followed by horizontal and vertical PPC, aligned
    into S_eqh (1 x W/4) and S_eqv (H/4 x 1)."""

    def __init__(self, channels, seq_channels=None, expansion=4, use_mix_mlp=True):
        super().__init__()
        c_s = seq_channels or channels
        self.use_mix_mlp = use_mix_mlp
        if use_mix_mlp:
            self.mix = nn.ModuleList(MixMlp(channels, expansion) for _ in range(4))
        self.ppc_h = nn.ModuleList(
            PpcCompress(i, HORIZONTAL, channels, c_s) for i in range(1, 5))
        self.ppc_v = nn.ModuleList(
            PpcCompress(i, VERTICAL, channels, c_s) for i in range(1, 5))
        self.out_channels = 4 * c_s

    def forward(self, pyramid):
        feats = [self.mix[i](f) for i, f in enumerate(pyramid)] if self.use_mix_mlp else pyramid
        s_eqh = align_concat([ppc(f) for ppc, f in zip(self.ppc_h, feats)])
        s_eqv = align_concat([ppc(f) for ppc, f in zip(self.ppc_v, feats)])
        return s_eqh, s_eqv
