"""Token sequence encoders with learned cross-stage fusion.

The feature map becomes P*P tokens of width D (row-major scan), a
class token is prepended and a learned positional table added. Encoders
are pre-norm residual blocks: x + MSA(LN(x)) then + MLP(LN(.)). With
every output projection zeroed an encoder is exactly the identity,
which the test suite exploits.

Stage fusion keeps one scalar logit per source (the stack input plus
each earlier encoder output); their softmax convexly combines the
sources into the last encoder's input.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError
from .nn import LayerNorm, Linear, Module
from .tensor import Tensor


class Tokenizer(Module):
    """(N, D, P, P) -> (N, P*P+1, D) with class token and positions."""

    def __init__(self, d: int, patch: int, rng: np.random.Generator):
        super().__init__()
        self.d, self.patch = d, patch
        n_tokens = patch * patch + 1
        self.cls = self.param("cls", rng.normal(0.0, 0.02, size=d))
        self.pos = self.param("pos", rng.normal(0.0, 0.02, size=(n_tokens, d)))

    def forward(self, feats: Tensor) -> Tensor:
        n, d, p, p2 = feats.shape
        if d != self.d or p != self.patch or p2 != self.patch:
            raise ShapeError(f"expected (N, {self.d}, {self.patch}, {self.patch}), got {feats.shape}")
        grid = T.transpose(T.reshape(feats, (n, d, p * p)), (0, 2, 1))  # row-major tokens
        cls = T.broadcast_to(T.reshape(self.cls, (1, 1, d)), (n, 1, d))
        return T.add(T.concat([cls, grid], axis=1), self.pos)


class Encoder(Module):
    """Pre-norm residual block: multi-head self-attention then an MLP."""

    def __init__(self, d: int, heads: int, d_mlp: int, rng: np.random.Generator,
                 drop: float = 0.1):
        super().__init__()
        if d % heads != 0:
            raise ConfigError(f"token width {d} is not divisible by head count {heads}")
        self.d, self.heads, self.d_k, self.drop = d, heads, d // heads, drop
        self.ln1 = LayerNorm(d)
        self.wq = Linear(d, d, rng)
        self.wk = Linear(d, d, rng)
        self.wv = Linear(d, d, rng)
        self.wo = Linear(d, d, rng)
        self.ln2 = LayerNorm(d)
        self.fc1 = Linear(d, d_mlp, rng)
        self.fc2 = Linear(d_mlp, d, rng)

    def _heads(self, x: Tensor, n: int, t: int) -> Tensor:
        return T.transpose(T.reshape(x, (n, t, self.heads, self.d_k)), (0, 2, 1, 3))

    def attend(self, x: Tensor) -> Tensor:
        n, t, _ = x.shape
        h = self.ln1.forward(x)
        q = self._heads(self.wq.forward(h), n, t)
        k = self._heads(self.wk.forward(h), n, t)
        v = self._heads(self.wv.forward(h), n, t)
        mixed = T.attention_core(q, k, v)  # (n, heads, t, d_k)
        merged = T.reshape(T.transpose(mixed, (0, 2, 1, 3)), (n, t, self.d))
        return self.wo.forward(merged)

    def forward(self, x: Tensor, rng: np.random.Generator | None = None) -> Tensor:
        att = self.attend(x)
        if self.training and rng is not None and self.drop > 0:
            att = T.dropout(att, self.drop, rng)
        x1 = T.add(x, att)
        m = self.fc2.forward(T.gelu(self.fc1.forward(self.ln2.forward(x1))))
        if self.training and rng is not None and self.drop > 0:
            m = T.dropout(m, self.drop, rng)
        return T.add(x1, m)


class StageFusion(Module):
    """Softmax-weighted convex combination of L same-shaped sequences."""

    def __init__(self, num_sources: int):
        super().__init__()
        if num_sources < 1:
            raise ConfigError("fusion needs at least one source")
        self.num_sources = num_sources
        self.logits = self.param("logits", np.zeros(num_sources))

    def fusion_weights(self) -> Tensor:
        return T.softmax(self.logits, axis=0)

    def fuse(self, sources: list[Tensor]) -> Tensor:
        if len(sources) != self.num_sources:
            raise ConfigError(f"expected {self.num_sources} fusion sources, got {len(sources)}")
        weights = self.fusion_weights()
        out = None
        for i, src in enumerate(sources):
            term = T.mul(src, weights[i])
            out = term if out is None else T.add(out, term)
        return out


class ClassHead(Module):
    """Final layer norm over the class token and a linear map to K logits."""

    def __init__(self, d: int, classes: int, rng: np.random.Generator):
        super().__init__()
        if classes < 2:
            raise ConfigError(f"need at least 2 classes, got {classes}")
        self.norm = LayerNorm(d)
        self.fc = Linear(d, classes, rng)

    def forward(self, seq: Tensor) -> Tensor:
        cls_token = seq[:, 0]  # (N, D)
        return self.fc.forward(self.norm.forward(cls_token))
