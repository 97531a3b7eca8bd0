"""Small trainable CNN producing a stride-16 feature map.

Input (B, 3, H, W) with H, W divisible by 16 maps to
(B, feature_dim, H/16, W/16). Four stride-2 convolutions set the total stride;
edge padding keeps the network spatially constant on constant inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import DimensionError
from .nn import BatchNorm, Conv2d, Module, ModuleList

TOTAL_STRIDE = 16


@dataclass
class BackboneConfig:
    stage_channels: list[int] = field(default_factory=lambda: [32, 64, 128, 256])
    feature_dim: int = 256

    def __post_init__(self):
        if len(self.stage_channels) != 4:
            raise ValueError("backbone needs exactly four stage widths")


class ConvBlock(Module):
    def __init__(self, cin, cout, kernel=3, stride=1, rng=None):
        super().__init__()
        self.conv = Conv2d(cin, cout, kernel, stride=stride,
                           padding=kernel // 2, pad_mode="edge", rng=rng)
        self.norm = BatchNorm(cout, channel_axis=1)

    def forward(self, x):
        return self.norm(self.conv(x)).relu()


class Stage(Module):
    """One stride-2 downsampling block followed by a stride-1 refinement block."""

    def __init__(self, cin, cout, rng=None):
        super().__init__()
        self.down = ConvBlock(cin, cout, stride=2, rng=rng)
        self.refine = ConvBlock(cout, cout, stride=1, rng=rng)

    def forward(self, x):
        return self.refine(self.down(x))


class Backbone(Module):
    def __init__(self, config: BackboneConfig | None = None, rng=None):
        super().__init__()
        self.config = config or BackboneConfig()
        c0, c1, c2, c3 = self.config.stage_channels
        self.stem = ConvBlock(3, c0, stride=2, rng=rng)
        self.stages = ModuleList([
            Stage(c0, c1, rng=rng),
            Stage(c1, c2, rng=rng),
            Stage(c2, c3, rng=rng),
        ])
        self.head = ConvBlock(c3, self.config.feature_dim, kernel=1, rng=rng)

    def forward(self, x):
        h, w = x.shape[-2:]
        if h % TOTAL_STRIDE or w % TOTAL_STRIDE:
            raise DimensionError(
                f"input extents ({h}, {w}) must be divisible by {TOTAL_STRIDE}; "
                "pad the image to a multiple of 16 first"
            )
        out = self.stem(x)
        for stage in self.stages:
            out = stage(out)
        return self.head(out)
