"""Hybrid pooling attention over grouped channels.

The channel axis is cut into G equal groups, each recalibrated twice
(once with average pooling, once with max pooling) by directional
pooled gates, then the two recalibrated maps are merged into a single
spatial sigmoid gate applied to the raw group. Groups are folded into
the batch axis so the whole module runs as one batched computation.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError
from .nn import Conv2d, GroupNorm, Module
from .tensor import Tensor


class Hpa(Module):
    def __init__(self, channels: int, groups: int, rng: np.random.Generator,
                 cross_pairing: bool = True):
        super().__init__()
        if channels % groups != 0:
            raise ConfigError(f"channel count {channels} is not divisible by group count {groups}")
        self.channels, self.groups = channels, groups
        self.sub = channels // groups
        self.cross_pairing = cross_pairing
        # one 1x1 fusion conv per pooling branch, shared across groups
        self.avg_fuse = Conv2d(self.sub, self.sub, 1, rng, bias=False)
        self.max_fuse = Conv2d(self.sub, self.sub, 1, rng, bias=False)
        # single-group normalization spanning all sub-channels, one per branch
        self.avg_norm = GroupNorm(1, self.sub)
        self.max_norm = GroupNorm(1, self.sub)

    # -- stages, each usable standalone for verification ----------------------

    def group_split(self, x: Tensor) -> Tensor:
        """(N, C, H, W) -> (N*G, C/G, H, W); channel blocks stay contiguous."""
        n, c, h, w = x.shape
        if c != self.channels:
            raise ShapeError(f"expected {self.channels} channels, got {c}")
        return T.reshape(x, (n * self.groups, self.sub, h, w))

    def group_merge(self, x: Tensor, batch: int) -> Tensor:
        g, c, h, w = x.shape
        return T.reshape(x, (batch, self.channels, h, w))

    def pooled_recalibrate(self, group: Tensor, mode: str) -> Tensor:
        """Gate each group by sigmoid row and column encodings.

        Directional pooling gives per-row (c' x H) and per-column (c' x W)
        summaries; both pass through one shared 1x1 convolution after being
        laid end to end, then gate the input multiplicatively.
        """
        fuse = self.avg_fuse if mode == "avg" else self.max_fuse
        n, c, h, w = group.shape
        zh = T.directional_pool(group, "horizontal", mode)  # (n, c', H)
        zw = T.directional_pool(group, "vertical", mode)    # (n, c', W)
        joint = T.concat([zh, zw], axis=-1)                 # (n, c', H+W)
        mixed = fuse.forward(T.reshape(joint, (n, c, h + w, 1)))
        h_att = T.sigmoid(T.reshape(mixed[:, :, :h, :], (n, c, h, 1)))
        w_att = T.sigmoid(T.reshape(mixed[:, :, h:, :], (n, c, 1, w)))
        return T.mul(T.mul(group, h_att), w_att)

    def cross_spatial_aggregate(self, g_avg: Tensor, g_max: Tensor, group_input: Tensor) -> Tensor:
        """Merge both recalibrations into one spatial gate on the raw group.

        Channel-softmax weights from one branch weigh the other branch's
        normalized map (the cross pairing), giving two 1 x H x W fields whose
        sigmoid sum gates the input.
        """
        if g_avg.shape != g_max.shape or g_avg.shape != group_input.shape:
            raise ShapeError(
                f"mismatched group shapes: {g_avg.shape}, {g_max.shape}, {group_input.shape}"
            )
        n, c, h, w = group_input.shape
        n_avg = self.avg_norm.forward(g_avg)
        n_max = self.max_norm.forward(g_max)
        a = T.softmax(T.global_pool2d(n_avg, "avg"), axis=-1)  # (n, c')
        b = T.softmax(T.global_pool2d(n_max, "max"), axis=-1)
        if self.cross_pairing:
            first, second = n_max, n_avg
        else:
            first, second = n_avg, n_max
        flat_first = T.reshape(first, (n, c, h * w))
        flat_second = T.reshape(second, (n, c, h * w))
        w_avg = T.matmul(T.reshape(a, (n, 1, c)), flat_first)    # (n, 1, HW)
        w_max = T.matmul(T.reshape(b, (n, 1, c)), flat_second)
        gate = T.sigmoid(T.reshape(T.add(w_avg, w_max), (n, 1, h, w)))
        return T.mul(group_input, gate)

    # -- full module ------------------------------------------------------------

    def forward(self, x: Tensor) -> Tensor:
        squeeze = x.ndim == 3
        if squeeze:
            x = T.reshape(x, (1,) + x.shape)
        if x.ndim != 4:
            raise ShapeError(f"expected (N, C, H, W) input, got {x.shape}")
        n = x.shape[0]
        grouped = self.group_split(x)
        g_avg = self.pooled_recalibrate(grouped, "avg")
        g_max = self.pooled_recalibrate(grouped, "max")
        out = self.group_merge(self.cross_spatial_aggregate(g_avg, g_max, grouped), n)
        return T.reshape(out, out.shape[1:]) if squeeze else out
