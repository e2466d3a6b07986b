"""Classification metrics: confusion matrix, OA, AA, Cohen's kappa."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError


def confusion_matrix(true, pred, num_classes: int) -> np.ndarray:
    """K x K counts; rows index the true class, columns the prediction."""
    true = np.asarray(true, dtype=np.int64)
    pred = np.asarray(pred, dtype=np.int64)
    if true.shape != pred.shape:
        raise DataError(f"label arrays differ in length: {true.shape} vs {pred.shape}")
    if true.size == 0:
        raise DataError("cannot build a confusion matrix from zero samples")
    for name, arr in (("true", true), ("predicted", pred)):
        if arr.min() < 0 or arr.max() >= num_classes:
            raise DataError(f"{name} labels fall outside 0..{num_classes - 1}")
    flat = true * num_classes + pred
    return np.bincount(flat, minlength=num_classes * num_classes).reshape(num_classes, num_classes)


@dataclass
class MetricsReport:
    oa: float
    aa: float
    kappa: float
    per_class: np.ndarray  # recall per class; NaN where a class has no samples

    def to_dict(self) -> dict:
        return {
            "oa": self.oa,
            "aa": self.aa,
            "kappa": self.kappa,
            "per_class": [None if np.isnan(v) else float(v) for v in self.per_class],
        }


def metrics_from_confusion(cm: np.ndarray) -> MetricsReport:
    cm = np.asarray(cm, dtype=np.float64)
    total = cm.sum()
    if total <= 0:
        raise DataError("confusion matrix is empty")
    oa = float(np.trace(cm) / total)
    row_tot = cm.sum(axis=1)
    col_tot = cm.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        per_class = np.where(row_tot > 0, np.diag(cm) / row_tot, np.nan)
    aa = float(np.nanmean(per_class))
    p_e = float((row_tot * col_tot).sum() / (total * total))
    if p_e >= 1.0:
        kappa = 1.0 if oa == 1.0 else 0.0  # degenerate single-cell matrix
    else:
        kappa = (oa - p_e) / (1.0 - p_e)
    return MetricsReport(oa=oa, aa=aa, kappa=float(kappa), per_class=per_class)
