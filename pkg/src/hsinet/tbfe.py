"""Twin-branch convolutional feature extraction.

Each block narrows the input with a pointwise convolution, runs a
spectral branch (depth-axis convolution over the channel dimension,
via an expand/squeeze to the 5-d layout) next to a spatial branch
(3x3 planar convolution), and concatenates the two back to 2S
channels. Two blocks plus two trailing 3x3 convolutions turn a
B-band patch into a D-channel map of the same spatial size.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .nn import BatchNorm2d, Conv2d, Module, SpectralConv
from .tensor import Tensor


class TbfeBlock(Module):
    """pointwise(C_in -> S), spectral and spatial branches, concat to 2S."""

    def __init__(self, c_in: int, s: int, rng: np.random.Generator):
        super().__init__()
        self.c_in, self.s = c_in, s
        self.pointwise = Conv2d(c_in, s, 1, rng, bias=False)
        self.spectral = SpectralConv(3, rng)
        self.spatial = Conv2d(s, s, 3, rng)
        self.norm = BatchNorm2d(2 * s)

    def branch_concat(self, x: Tensor) -> Tensor:
        """The [F3d; F2d] concatenation before the tail activation/norm."""
        f = self.pointwise.forward(x)
        n, s = f.shape[0], f.shape[1]
        # channels become the depth axis so the 1x1x3 kernel mixes adjacent
        # channels at each pixel without touching spatial neighbours
        f5 = T.reshape(f, (n, 1) + f.shape[1:])
        f3d = T.relu(T.reshape(self.spectral.forward(f5), f.shape))
        f2d = T.relu(self.spatial.forward(f))
        return T.concat([f3d, f2d], axis=1)

    def forward(self, x: Tensor) -> Tensor:
        return self.norm.forward(T.relu(self.branch_concat(x)))


class TbfeStack(Module):
    """Two blocks then two 3x3 convolutions: (N, B, P, P) -> (N, D, P, P)."""

    def __init__(self, bands: int, s: int, d: int, rng: np.random.Generator):
        super().__init__()
        self.bands, self.s, self.d = bands, s, d
        self.block1 = TbfeBlock(bands, s, rng)
        self.block2 = TbfeBlock(2 * s, s, rng)
        self.conv3 = Conv2d(2 * s, d, 3, rng)
        self.norm3 = BatchNorm2d(d)
        self.conv4 = Conv2d(d, d, 3, rng)
        self.norm4 = BatchNorm2d(d)

    def forward(self, x: Tensor) -> Tensor:
        x = self.block1.forward(x)
        x = self.block2.forward(x)
        x = self.norm3.forward(T.relu(self.conv3.forward(x)))
        return self.norm4.forward(T.relu(self.conv4.forward(x)))


class SerialExtractor(Module):
    """Ablation baseline: spectral and spatial convolutions in series.

    Mirrors the stack's outer interface (B bands in, D channels out,
    spatial size preserved) but replaces the twin-branch blocks with a
    single depth-axis convolution followed by a single planar one.
    """

    def __init__(self, bands: int, s: int, d: int, rng: np.random.Generator):
        super().__init__()
        self.bands, self.s, self.d = bands, s, d
        self.spectral = SpectralConv(3, rng)
        self.norm1 = BatchNorm2d(bands)
        self.spatial = Conv2d(bands, 2 * s, 3, rng)
        self.norm2 = BatchNorm2d(2 * s)
        self.conv3 = Conv2d(2 * s, d, 3, rng)
        self.norm3 = BatchNorm2d(d)
        self.conv4 = Conv2d(d, d, 3, rng)
        self.norm4 = BatchNorm2d(d)

    def forward(self, x: Tensor) -> Tensor:
        n = x.shape[0]
        f5 = T.reshape(x, (n, 1) + x.shape[1:])
        x = self.norm1.forward(T.relu(T.reshape(self.spectral.forward(f5), x.shape)))
        x = self.norm2.forward(T.relu(self.spatial.forward(x)))
        x = self.norm3.forward(T.relu(self.conv3.forward(x)))
        return self.norm4.forward(T.relu(self.conv4.forward(x)))
