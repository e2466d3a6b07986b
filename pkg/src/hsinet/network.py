"""Full classifier: feature extraction, attention, encoders, head.

Also defines the architecture config record and the checkpoint format:
a canonical JSON manifest (config plus parameter registry with names,
shapes and trainable flags), a newline, a NUL byte, then every array's
float32 little-endian payload in registry order.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import tensor as T
from .errors import ConfigError, LoadError
from .hpa import Hpa
from .nn import Module, ModuleList
from .tbfe import SerialExtractor, TbfeStack
from .tensor import Tensor, as_tensor
from .transformer import ClassHead, Encoder, StageFusion, Tokenizer

CHECKPOINT_FORMAT = "hsinet-checkpoint-v1"


@dataclass
class ModelConfig:
    classes: int
    bands: int = 30
    patch: int = 19
    s: int = 32
    d: int = 64
    groups: int = 8
    heads: int = 16
    encoders: int = 3
    d_mlp: int = 0          # 0 means the 4*d default
    dropout: float = 0.1
    tbfe: str = "on"        # on | naive
    hpa: str = "on"         # on | off
    cff: str = "on"         # on | off
    cross_pairing: bool = True

    def __post_init__(self):
        if self.d_mlp == 0:
            self.d_mlp = 4 * self.d

    def validate(self) -> "ModelConfig":
        def positive(name, value):
            if not isinstance(value, int) or value < 1:
                raise ConfigError(f"{name} must be a positive integer, got {value!r}")

        for name in ("classes", "bands", "patch", "s", "d", "groups", "heads", "encoders", "d_mlp"):
            positive(name, getattr(self, name))
        if self.classes < 2:
            raise ConfigError(f"classes must be at least 2, got {self.classes}")
        if self.patch % 2 == 0 or self.patch < 3:
            raise ConfigError(f"patch size must be odd and at least 3, got {self.patch}")
        if self.d % self.heads != 0:
            raise ConfigError(f"token width d={self.d} must be divisible by heads={self.heads}")
        if self.d % self.groups != 0:
            raise ConfigError(f"channel count d={self.d} must be divisible by groups={self.groups}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.tbfe not in ("on", "naive"):
            raise ConfigError(f"tbfe flag must be 'on' or 'naive', got {self.tbfe!r}")
        if self.hpa not in ("on", "off"):
            raise ConfigError(f"hpa flag must be 'on' or 'off', got {self.hpa!r}")
        if self.cff not in ("on", "off"):
            raise ConfigError(f"cff flag must be 'on' or 'off', got {self.cff!r}")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, payload: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(payload) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**payload).validate()


class Network(Module):
    """(N, bands, P, P) patches in, (N, classes) logits out."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        super().__init__()
        config.validate()
        self.config = config
        rng = np.random.default_rng(seed)
        extractor_cls = TbfeStack if config.tbfe == "on" else SerialExtractor
        self.extractor = extractor_cls(config.bands, config.s, config.d, rng)
        self.attention = Hpa(config.d, config.groups, rng, config.cross_pairing) if config.hpa == "on" else None
        self.tokenizer = Tokenizer(config.d, config.patch, rng)
        self.encoders = ModuleList(
            Encoder(config.d, config.heads, config.d_mlp, rng, config.dropout)
            for _ in range(config.encoders)
        )
        self.fusion = StageFusion(config.encoders) if config.cff == "on" else None
        self.head = ClassHead(config.d, config.classes, rng)

    def forward(self, x, rng: np.random.Generator | None = None) -> Tensor:
        x = as_tensor(x)
        squeeze = x.ndim == 3
        if squeeze:
            x = T.reshape(x, (1,) + x.shape)
        feats = self.extractor.forward(x)
        if self.attention is not None:
            feats = self.attention.forward(feats)
        seq = self.tokenizer.forward(feats)
        if self.fusion is not None:
            sources = [seq]
            current = seq
            for encoder in list(self.encoders)[:-1]:
                current = encoder.forward(current, rng)
                sources.append(current)
            current = self.encoders[len(self.encoders) - 1].forward(self.fusion.fuse(sources), rng)
        else:
            current = seq
            for encoder in self.encoders:
                current = encoder.forward(current, rng)
        logits = self.head.forward(current)
        return T.reshape(logits, (logits.shape[1],)) if squeeze else logits

    def predict(self, patches: np.ndarray, batch_size: int = 256) -> np.ndarray:
        """Argmax class indices (0-based) for an (n, B, P, P) array."""
        was_training = self.training
        self.eval()
        out = np.empty(len(patches), dtype=np.int64)
        with T.no_grad():
            for start in range(0, len(patches), batch_size):
                chunk = patches[start:start + batch_size]
                logits = self.forward(Tensor(chunk))
                out[start:start + len(chunk)] = np.argmax(logits.data, axis=1)
        if was_training:
            self.train()
        return out


# -- checkpoint serialization ----------------------------------------------------


def save_checkpoint(path, net: Network):
    state = list(net.named_state())
    manifest = {
        "format": CHECKPOINT_FORMAT,
        "config": net.config.to_dict(),
        "registry": [
            {"name": name, "shape": list(t.shape), "trainable": trainable}
            for name, t, trainable in state
        ],
    }
    header = (json.dumps(manifest, sort_keys=True, separators=(",", ":")) + "\n").encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(b"\x00")
        for _, t, _ in state:
            fh.write(np.ascontiguousarray(t.data, dtype="<f4").tobytes())


def load_checkpoint(path) -> tuple[ModelConfig, dict]:
    """Parse a checkpoint into its config and a name -> array mapping."""
    with open(path, "rb") as fh:
        blob = fh.read()
    nul = blob.find(b"\x00")
    if nul < 0:
        raise LoadError(f"{path}: no NUL separator between manifest and payload", offset=0)
    try:
        manifest = json.loads(blob[:nul].decode("ascii"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise LoadError(f"{path}: manifest is not valid JSON: {exc}", offset=0) from None
    if manifest.get("format") != CHECKPOINT_FORMAT:
        raise LoadError(f"{path}: unsupported checkpoint format {manifest.get('format')!r}", offset=0)
    config = ModelConfig.from_dict(manifest["config"])
    start = nul + 1
    expected = sum(int(np.prod(e["shape"])) for e in manifest["registry"]) * 4
    actual = len(blob) - start
    if actual != expected:
        raise LoadError(
            f"{path}: parameter payload expected {expected} bytes, found {actual}",
            offset=start + min(actual, expected),
        )
    state = {}
    offset = start
    for entry in manifest["registry"]:
        count = int(np.prod(entry["shape"]))
        values = np.frombuffer(blob, dtype="<f4", count=count, offset=offset)
        state[entry["name"]] = values.reshape(entry["shape"]).copy()
        offset += count * 4
    return config, state


def apply_state(net: Network, state: dict):
    """Copy checkpoint arrays into a network, insisting on exact shapes."""
    for name, t, _ in net.named_state():
        if name not in state:
            raise LoadError(f"checkpoint is missing parameter {name!r}")
        loaded = state[name]
        if tuple(loaded.shape) != t.shape:
            raise LoadError(
                f"shape mismatch for {name!r}: checkpoint has {tuple(loaded.shape)}, "
                f"architecture expects {t.shape}"
            )
        t.data = loaded.astype(t.data.dtype)
    extra = set(state) - {name for name, _, _ in net.named_state()}
    if extra:
        raise LoadError(f"checkpoint carries unknown parameters: {sorted(extra)[:3]}")


def restore_network(path) -> Network:
    config, state = load_checkpoint(path)
    net = Network(config, seed=0)
    apply_state(net, state)
    return net
