"""Ensemble decoding: A-Conv stacks that stretch the collapsed axis back
to H/4 x W/4, the three-way ensemble sum, and the per-branch bottleneck +
SegHead. Also hosts the full network wiring with train/eval pruning.
"""

import math
from dataclasses import dataclass

import torch
import torch.nn as nn

from .bicompress import HORIZONTAL, VERTICAL, BiCompress
from .encoder import PyramidEncoder
from .equirect_ops import RingConv2d, upsample

HDB = "HDB"
VDB = "VDB"
EB = "EB"
BRANCHES = (HDB, VDB, EB)


@dataclass
class BranchOutputs:
    branch: str
    bottleneck_feature: torch.Tensor  # (B, C_b, H/4, W/4)
    logits: torch.Tensor              # (B, N_cls, H, W)


class AConvDecoder(nn.Module):
    """n layers of (x2 nearest upsample along the collapsed axis, 3x3 ring
    conv, BN, ReLU), preceded by a 1x1 reduction of the concatenated
    multi-level channels."""

    def __init__(self, direction, in_channels, out_channels, n_layers):
        super().__init__()
        self.direction = direction
        self.n_layers = n_layers
        self.reduce = nn.Sequential(
            nn.Conv2d(in_channels, out_channels, 1),
            nn.BatchNorm2d(out_channels),
            nn.ReLU(inplace=True),
        )
        self.layers = nn.ModuleList()
        for _ in range(n_layers):
            self.layers.append(nn.Sequential(
                RingConv2d(out_channels, out_channels, 3, bias=False),
                nn.BatchNorm2d(out_channels),
                nn.ReLU(inplace=True),
            ))

    def forward(self, seq):
        if seq.direction != self.direction:
            raise ValueError(f"expected {self.direction} sequence, got {seq.direction}")
        x = self.reduce(seq.data)
        for layer in self.layers:
            h, w = x.shape[-2:]
            target = (2 * h, w) if self.direction == HORIZONTAL else (h, 2 * w)
            x = layer(upsample(x, target, mode="nearest"))
        return x


def ensemble_sum(d_h, d_v, f1):
    if d_h.shape != d_v.shape or d_h.shape != f1.shape:
        raise ValueError(f"shape mismatch: {tuple(d_h.shape)} / {tuple(d_v.shape)} / {tuple(f1.shape)}")
    return d_h + d_v + f1


class BranchHead(nn.Module):
    """Bottleneck (1x1 -> 3x3 -> 1x1, BN+ReLU each) exposing the distilled
    feature, then a SegHead upsampling x4 to full-resolution logits."""

    def __init__(self, in_channels, mid_channels, n_classes):
        super().__init__()
        self.bottleneck = nn.Sequential(
            nn.Conv2d(in_channels, mid_channels, 1, bias=False),
            nn.BatchNorm2d(mid_channels),
            nn.ReLU(inplace=True),
            RingConv2d(mid_channels, mid_channels, 3, bias=False),
            nn.BatchNorm2d(mid_channels),
            nn.ReLU(inplace=True),
            nn.Conv2d(mid_channels, mid_channels, 1, bias=False),
            nn.BatchNorm2d(mid_channels),
            nn.ReLU(inplace=True),
        )
        self.mid_conv = nn.Sequential(
            RingConv2d(mid_channels, mid_channels, 3, bias=False),
            nn.BatchNorm2d(mid_channels),
            nn.ReLU(inplace=True),
        )
        self.classifier = nn.Conv2d(mid_channels, n_classes, 1)

    def forward(self, x):
        feat = self.bottleneck(x)
        h, w = feat.shape[-2:]
        y = upsample(feat, (2 * h, 2 * w), mode="bilinear")
        y = self.mid_conv(y)
        y = upsample(y, (4 * h, 4 * w), mode="bilinear")
        return feat, self.classifier(y)


class BiCompressNet(nn.Module):
    """Full model: pyramid encoder, bi-directional compression, A-Conv
    decoding, ensemble sum, and the three distillation branches.

    Eval-mode forward computes only the teacher (EB) branch; the student
    heads exist purely for training-time supervision.
    """

    def __init__(self, encoder_config, resolution, n_classes=13, c_decode=None,
                 c_bottleneck=None, backbone=None, use_mix_mlp=True):
        super().__init__()
        h, w = resolution
        if h % 32 != 0 or w != 2 * h:
            raise ValueError(f"resolution must have H % 32 == 0 and W == 2H, got ({h},{w})")
        self.resolution = (h, w)
        self.n_classes = n_classes
        c = encoder_config.c_fpn
        c_d = c_decode or c
        c_b = c_bottleneck or c_d
        self.encoder = PyramidEncoder(encoder_config, backbone=backbone)
        self.compress = BiCompress(c, use_mix_mlp=use_mix_mlp)
        n_h = int(math.log2(h // 4))
        n_v = int(math.log2(w // 4))
        self.decoder_h = AConvDecoder(HORIZONTAL, self.compress.out_channels, c_d, n_h)
        self.decoder_v = AConvDecoder(VERTICAL, self.compress.out_channels, c_d, n_v)
        self.f1_proj = nn.Identity() if c == c_d else nn.Conv2d(c, c_d, 1)
        self.heads = nn.ModuleDict({b: BranchHead(c_d, c_b, n_classes) for b in BRANCHES})

    def forward_full(self, image, train_mode=True):
        h, w = self.resolution
        if image.shape[-2:] != (h, w):
            raise ValueError(f"expected input {h}x{w}, got {tuple(image.shape[-2:])}")
        pyramid = self.encoder(image)
        s_eqh, s_eqv = self.compress(pyramid)
        d_h = self.decoder_h(s_eqh)
        d_v = self.decoder_v(s_eqv)
        d_e = ensemble_sum(d_h, d_v, self.f1_proj(pyramid[0]))
        outputs = {}
        if train_mode:
            for branch, feature in ((HDB, d_h), (VDB, d_v)):
                feat, logits = self.heads[branch](feature)
                outputs[branch] = BranchOutputs(branch, feat, logits)
        feat, logits = self.heads[EB](d_e)
        outputs[EB] = BranchOutputs(EB, feat, logits)
        return outputs

    def forward(self, image):
        return self.forward_full(image, train_mode=self.training)
