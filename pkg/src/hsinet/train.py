"""Training loop, evaluation, the ablation matrix and parameter accounting."""

from __future__ import annotations

import time
from dataclasses import dataclass, fields, replace

import numpy as np

from . import tensor as T
from .data import PatchSet
from .errors import ConfigError, DataError, NumericError
from .metrics import MetricsReport, confusion_matrix, metrics_from_confusion
from .network import ModelConfig, Network
from .tensor import Tensor


@dataclass
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 64
    epochs: int = 100
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def validate(self) -> "TrainConfig":
        # lr 0 is allowed: a zero-step run is the documented no-op baseline
        if self.lr < 0:
            raise ConfigError(f"learning rate must be non-negative, got {self.lr}")
        if not isinstance(self.batch_size, int) or self.batch_size < 1:
            raise ConfigError(f"batch size must be a positive integer, got {self.batch_size!r}")
        if not isinstance(self.epochs, int) or self.epochs < 1:
            raise ConfigError(f"epoch count must be a positive integer, got {self.epochs!r}")
        if not 0 < self.beta1 < 1 or not 0 < self.beta2 < 1:
            raise ConfigError("moment coefficients must lie in (0, 1)")
        return self

    @classmethod
    def from_dict(cls, payload: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(payload) - known
        if unknown:
            raise ConfigError(f"unknown training config keys: {sorted(unknown)}")
        return cls(**payload).validate()


class AdamOptimizer:
    """Standard Adam with bias-corrected first and second moments."""

    def __init__(self, params: list[Tensor], lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1 ** self.t
        bias2 = 1.0 - b2 ** self.t
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            g = p.grad
            self.m[i] = b1 * self.m[i] + (1 - b1) * g
            self.v[i] = b2 * self.v[i] + (1 - b2) * (g * g)
            m_hat = self.m[i] / bias1
            v_hat = self.v[i] / bias2
            p.data = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def zero_grad(self):
        for p in self.params:
            p.grad = None


def train(net: Network, patchset: PatchSet, config: TrainConfig, on_epoch=None) -> list[dict]:
    """Fit the network on the patchset's train split.

    Returns one record per epoch: {epoch, loss, train_oa, seconds}. The
    shuffle for epoch e is seeded with config.seed + e, and dropout draws
    from an independent per-epoch stream, so runs are exactly repeatable.
    ``on_epoch`` sees each record; returning True stops training early.
    """
    config.validate()
    train_idx = patchset.train_indices
    if len(train_idx) == 0:
        raise DataError("patchset has no training samples; run the split first")
    labels0 = patchset.labels[train_idx] - 1  # network classes are 0-based
    optimizer = AdamOptimizer(net.parameters(), config.lr, config.beta1, config.beta2, config.eps)
    history = []
    for epoch in range(config.epochs):
        started = time.perf_counter()
        net.train()
        order = np.random.default_rng(config.seed + epoch).permutation(len(train_idx))
        drop_rng = np.random.default_rng([config.seed, epoch])
        losses, weights = [], []
        for batch_no, start in enumerate(range(0, len(order), config.batch_size)):
            chosen = order[start:start + config.batch_size]
            batch = Tensor(patchset.patch_array(train_idx[chosen]))
            optimizer.zero_grad()
            logits = net.forward(batch, drop_rng)
            loss = T.cross_entropy(logits, labels0[chosen])
            loss_value = float(loss.data)
            if not np.isfinite(loss_value):
                raise NumericError(f"non-finite loss in epoch {epoch}, batch {batch_no}")
            loss.backward()
            optimizer.step()
            losses.append(loss_value * len(chosen))
            weights.append(len(chosen))
        mean_loss = float(np.sum(losses) / np.sum(weights))
        train_oa = float(np.mean(net.predict(patchset.patch_array(train_idx)) == labels0))
        record = {
            "epoch": epoch,
            "loss": mean_loss,
            "train_oa": train_oa,
            "seconds": time.perf_counter() - started,
        }
        history.append(record)
        if on_epoch is not None and on_epoch(record):
            break
    return history


def evaluate(net: Network, patchset: PatchSet, indices=None) -> tuple[np.ndarray, MetricsReport]:
    """Confusion matrix and metrics over the test split (or given indices)."""
    if indices is None:
        indices = patchset.test_indices
    indices = np.asarray(indices)
    if len(indices) == 0:
        raise DataError("nothing to evaluate: empty test split")
    pred = net.predict(patchset.patch_array(indices))
    true = patchset.labels[indices] - 1
    cm = confusion_matrix(true, pred, patchset.num_classes)
    return cm, metrics_from_confusion(cm)


# the published ablation matrix: (tbfe, hpa, cff) per case, 1-indexed
ABLATION_CASES = {
    1: ("naive", "off", "off"),
    2: ("on", "off", "off"),
    3: ("on", "off", "on"),
    4: ("on", "on", "off"),
    5: ("naive", "on", "on"),
    6: ("on", "on", "on"),
}


def ablate(model_config: ModelConfig, train_config: TrainConfig, patchset: PatchSet,
           cases=None, model_seed: int = 0, on_epoch=None) -> list[dict]:
    """Train/evaluate one run per ablation case on the same split and seeds."""
    results = []
    for case in sorted(cases or ABLATION_CASES):
        tbfe, hpa, cff = ABLATION_CASES[case]
        cfg = replace(model_config, tbfe=tbfe, hpa=hpa, cff=cff)
        net = Network(cfg, seed=model_seed)
        train(net, patchset, train_config, on_epoch=on_epoch)
        _, report = evaluate(net, patchset)
        results.append(
            {
                "case": case,
                "tbfe": tbfe,
                "hpa": hpa,
                "cff": cff,
                "oa": report.oa,
                "aa": report.aa,
                "kappa": report.kappa,
            }
        )
    return results


def param_report(net: Network) -> dict:
    """Trainable-scalar totals, overall and per top-level component."""
    components = {}
    for name, child in net._children.items():
        components[name] = child.num_parameters()
    direct = sum(t.size for t in net._params.values())
    if direct:
        components["(root)"] = direct
    return {"total": net.num_parameters(), "components": components}
