"""Shared 2D feature extractor with feature pyramid and cross-slice fusion.

The M grouped images of a sample run through identical weights as one
batch. At each configured fusion point the M same-stage maps are
concatenated channelwise and convolved back to the original width; the
result replaces only the central map. The pyramid merges stages top-down
and returns the finest (stride 4) level for the heads.
"""

from dataclasses import dataclass, field

import numpy as np

from ..autodiff import Tensor, ops
from ..errors import ConfigError
from .nn import BiasFreeConv2d, Conv2d

FUSE_AFTER_PYRAMID = "after_pyramid"


def fusion_point_name(stage_number):
    return f"after_stage_{stage_number}"  # 1-based, like the stage numbering


@dataclass
class BackboneConfig:
    stage_widths: tuple = (16, 32, 64)
    blocks_per_stage: tuple = (2, 2, 2)
    dense_stages: tuple = (False, False, False)
    pyramid_channels: int = 64
    fusion_points: tuple = (fusion_point_name(2), FUSE_AFTER_PYRAMID)
    images_per_sample: int = 3
    fusion_init: str = "identity"  # identity keeps the fused net equal to the plain one

    def __post_init__(self):
        n = len(self.stage_widths)
        if n < 2:
            raise ConfigError("backbone needs at least 2 stages")
        if len(self.blocks_per_stage) != n or len(self.dense_stages) != n:
            raise ConfigError("per-stage settings must match the number of stages")
        if self.pyramid_channels <= 0:
            raise ConfigError("pyramid channels must be positive")
        if self.images_per_sample % 2 == 0:
            raise ConfigError("images per sample must be odd (unique central image)")
        valid = {fusion_point_name(i + 1) for i in range(n)} | {FUSE_AFTER_PYRAMID}
        unknown = set(self.fusion_points) - valid
        if unknown:
            raise ConfigError(f"unknown fusion points {sorted(unknown)}; valid: {sorted(valid)}")
        if self.fusion_init not in ("identity", "random"):
            raise ConfigError("fusion_init must be identity or random")

    def stage_strides(self):
        return [4 * 2 ** i for i in range(len(self.stage_widths))]


class Backbone:
    def __init__(self, config, rng, with_fusion=True, with_pyramid=True):
        self.config = config
        self.with_fusion = with_fusion
        self.with_pyramid = with_pyramid
        widths = config.stage_widths

        self.stem = Conv2d("backbone.stem", rng, 3, widths[0], k=3, stride=2)
        self.stages = []
        self.stage_out_channels = []
        c_in = widths[0]
        for s, width in enumerate(widths):
            blocks = []
            c = c_in
            for b in range(config.blocks_per_stage[s]):
                conv = Conv2d(f"backbone.stage{s + 1}.block{b}", rng, c, width, k=3)
                blocks.append(conv)
                c = c + width if config.dense_stages[s] else width
            self.stages.append(blocks)
            self.stage_out_channels.append(c)
            c_in = c

        self.fusions = {}
        for point in config.fusion_points:
            if point == FUSE_AFTER_PYRAMID:
                c = config.pyramid_channels
            else:
                c = self.stage_out_channels[int(point.rsplit("_", 1)[1]) - 1]
            self.fusions[point] = self._make_fusion_conv(point, rng, c)

        p = config.pyramid_channels
        self.laterals = [
            BiasFreeConv2d(f"backbone.pyramid.lateral{s + 1}", rng, c, p, k=1)
            for s, c in enumerate(self.stage_out_channels)
        ]
        self.smooth = BiasFreeConv2d("backbone.pyramid.smooth", rng, p, p, k=3)

    def _make_fusion_conv(self, point, rng, channels):
        m = self.config.images_per_sample
        conv = Conv2d(
            f"backbone.fuse.{point}", rng, m * channels, channels, k=1,
            init="zero" if self.config.fusion_init == "identity" else "he",
        )
        if self.config.fusion_init == "identity":
            center = (m // 2) * channels
            w = conv.weight.tensor.data
            for c in range(channels):
                w[c, center + c, 0, 0] = 1.0
        return conv

    def params(self):
        out = self.stem.params()
        for blocks in self.stages:
            for b in blocks:
                out += b.params()
        for point in self.config.fusion_points:
            out += self.fusions[point].params()
        for lat in self.laterals:
            out += lat.params()
        out += self.smooth.params()
        return out

    # -- forward pieces ----------------------------------------------------

    def _run_block(self, blocks, dense, x):
        for conv in blocks:
            y = ops.relu(conv(x))
            x = ops.concat_channels([x, y]) if dense else y
        return x

    def fuse_3d(self, fms, point):
        """Replace the central map of [M,C,H,W] with the fused map."""
        m = self.config.images_per_sample
        c = fms.shape[1]
        center = m // 2
        stackwise = ops.reshape(fms, (1, m * c, fms.shape[2], fms.shape[3]))
        fused = self.fusions[point](stackwise)  # [1, C, H, W]
        upper = ops.narrow(fms, 0, 0, center)
        lower = ops.narrow(fms, 0, center + 1, m - center - 1)
        return ops.concat([upper, fused, lower], axis=0)

    def shared_forward(self, images, fusion=None):
        """Per-stage maps for all M images; fusion applied where configured.

        images: Tensor [M, 3, H, W]. Returns list of per-stage tensors.
        """
        fusion = self.with_fusion if fusion is None else fusion
        x = ops.max_pool2d(ops.relu(self.stem(images)), 2, 2)
        stage_maps = []
        for s, blocks in enumerate(self.stages):
            if s > 0:
                x = ops.max_pool2d(x, 2, 2)
            x = self._run_block(blocks, self.config.dense_stages[s], x)
            point = fusion_point_name(s + 1)
            if fusion and point in self.fusions:
                x = self.fuse_3d(x, point)
            stage_maps.append(x)
        return stage_maps

    def feature_pyramid(self, stage_maps):
        """Top-down merge; returns the finest (stride 4) map, all M images."""
        if not self.with_pyramid:
            return self.laterals[0](stage_maps[0])
        top = None
        for s in range(len(stage_maps) - 1, -1, -1):
            lat = self.laterals[s](stage_maps[s])
            if top is None:
                top = lat
            else:
                up = ops.bilinear_resize(top, lat.shape[2], lat.shape[3])
                top = lat + up
        return self.smooth(top)

    def forward(self, images, fusion=None):
        """Full pass; returns the central image's finest map [1, P, H/4, W/4]."""
        fusion = self.with_fusion if fusion is None else fusion
        maps = self.shared_forward(images, fusion=fusion)
        pyr = self.feature_pyramid(maps)
        if fusion and FUSE_AFTER_PYRAMID in self.fusions:
            pyr = self.fuse_3d(pyr, FUSE_AFTER_PYRAMID)
        center = self.config.images_per_sample // 2
        return ops.narrow(pyr, 0, center, 1)
