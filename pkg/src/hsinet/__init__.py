"""Hyperspectral image classification with a CNN-transformer hybrid.

The package bundles a small numpy-based differentiable tensor kernel,
the network built on top of it (dual-branch spectral/spatial feature
extraction, pooled-attention recalibration, transformer encoders with
learned stage fusion), dataset containers and preprocessing, training
and evaluation loops, and a command line interface.
"""

__version__ = "0.1.0"

from .errors import (
    ConfigError,
    DataError,
    HsinetError,
    LoadError,
    NumericError,
    ShapeError,
)
from .tensor import Tensor, no_grad

__all__ = [
    "Tensor",
    "no_grad",
    "HsinetError",
    "ConfigError",
    "ShapeError",
    "DataError",
    "LoadError",
    "NumericError",
    "__version__",
]
