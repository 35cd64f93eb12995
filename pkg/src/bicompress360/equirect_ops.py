"""Equirectangular-aware tensor primitives.

Panoramas wrap around horizontally, so left/right feature borders are
continuous while top/bottom are not. Everything here treats the last
axis as the circular one and the second-to-last as the zero-fill one.
"""

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F


@dataclass
class PadSpec:
    left: int = 0
    right: int = 0
    top: int = 0
    bottom: int = 0

    def __post_init__(self):
        if min(self.left, self.right, self.top, self.bottom) < 0:
            raise ValueError("padding amounts must be non-negative")


def circular_pad(feature, spec):
    """Pad the last axis circularly and the second-to-last with zeros.

    Accepts any tensor with >= 2 dims laid out as (..., h, w).
    """
    w = feature.shape[-1]
    if spec.left >= w or spec.right >= w:
        raise ValueError(f"circular pad ({spec.left},{spec.right}) must be < width {w}")
    parts = []
    if spec.left:
        parts.append(feature[..., w - spec.left:])
    parts.append(feature)
    if spec.right:
        parts.append(feature[..., :spec.right])
    out = torch.cat(parts, dim=-1) if len(parts) > 1 else feature
    if spec.top or spec.bottom:
        out = F.pad(out, (0, 0, spec.top, spec.bottom))
    return out


def window_avg_pool(feature, bins):
    """Average-pool (..., h, w) onto an exact (b_h, b_w) partition."""
    b_h, b_w = bins
    h, w = feature.shape[-2], feature.shape[-1]
    if b_h <= 0 or b_w <= 0:
        raise ValueError("bin counts must be positive")
    if h % b_h != 0 or w % b_w != 0:
        raise ValueError(f"bins {bins} do not divide feature size ({h},{w})")
    kh, kw = h // b_h, w // b_w
    shape = feature.shape[:-2] + (b_h, kh, b_w, kw)
    return feature.reshape(shape).mean(dim=(-3, -1))


def upsample(feature, target, mode="bilinear"):
    """Upsample (..., h, w) to target (h2, w2); downscaling is rejected."""
    h2, w2 = target
    h, w = feature.shape[-2], feature.shape[-1]
    if h2 < h or w2 < w:
        raise ValueError(f"upsample target {target} smaller than input ({h},{w})")
    if (h2, w2) == (h, w):
        return feature
    if mode not in ("nearest", "bilinear"):
        raise ValueError(f"unknown mode {mode!r}")
    x = feature.reshape((-1, 1) + feature.shape[-2:])
    kwargs = {} if mode == "nearest" else {"align_corners": False}
    x = F.interpolate(x, size=(h2, w2), mode=mode, **kwargs)
    return x.reshape(feature.shape[:-2] + (h2, w2))


class RingConv2d(nn.Module):
    """Conv2d with circular horizontal padding and zero vertical padding."""

    def __init__(self, in_ch, out_ch, kernel_size, stride=1, bias=True, groups=1):
        super().__init__()
        if isinstance(kernel_size, int):
            kernel_size = (kernel_size, kernel_size)
        kh, kw = kernel_size
        self.pad = PadSpec(left=kw // 2, right=kw // 2, top=kh // 2, bottom=kh // 2)
        self.conv = nn.Conv2d(in_ch, out_ch, kernel_size, stride=stride,
                              padding=0, bias=bias, groups=groups)

    def forward(self, x):
        return self.conv(circular_pad(x, self.pad))
